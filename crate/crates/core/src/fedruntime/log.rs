use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Global MAE/MSE over one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub count: usize,
}

/// One line of the training log. Round 0 holds the evaluation of the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: u64,
    /// Mean local batch loss over the round's users.
    pub loss: Option<f64>,
    pub valid: Option<Metrics>,
    pub test: Option<Metrics>,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub seconds: f64,
}

/// Append-only record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    rows: Vec<LogRow>,
    pub best_round: u64,
    pub stopped_early: bool,
}

pub const CSV_HEADER: &str = "round,loss,mae_valid,mse_valid,bytes_down,bytes_up,seconds";

impl TrainLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Attaches evaluation results to the latest row.
    pub(crate) fn record_eval(&mut self, valid: Metrics, test: Metrics) {
        if let Some(last) = self.rows.last_mut() {
            last.valid = Some(valid);
            last.test = Some(test);
        }
    }

    pub fn evals(&self) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.valid.is_some())
    }

    /// Renders the log as CSV. Wall time is left blank unless `wall_time` is set,
    /// which keeps the file a pure function of seed, config and data.
    pub fn to_csv(&self, wall_time: bool) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.round,
                opt(r.loss),
                opt(r.valid.map(|m| m.mae)),
                opt(r.valid.map(|m| m.mse)),
                r.bytes_down,
                r.bytes_up,
                if wall_time {
                    format!("{:.6}", r.seconds)
                } else {
                    String::new()
                }
            );
        }
        out
    }
}
