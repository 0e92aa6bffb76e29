//! The `train`, `evaluate` and `export` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use metamf::checkpoint;
use metamf::dataset::{load_ratings, split_per_user, write_shard_manifest, Chunk, RatingsTable, SplitOutcome};
use metamf::fedruntime::{global_evaluate, init_server, train, Metrics, TrainLog};
use metamf::metanet::{generate_model, MetaParams};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "trainlog.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "shards.tsv";

/// Contents of `metrics.json` after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub variant: String,
    pub rounds: u64,
    pub best_round: u64,
    pub stopped_early: bool,
    pub valid: Metrics,
    pub test: Metrics,
}

/// Ratings and their per-user split, as every subcommand sees them.
pub struct PreparedData {
    pub table: RatingsTable,
    pub split: SplitOutcome,
}

pub fn prepare_data(config: &RunConfig) -> Result<PreparedData, CliError> {
    config.validate()?;
    let path = &config.dataset.path;
    if path.as_os_str().is_empty() {
        return Err(CliError::Usage("no dataset path given (set dataset.path or pass --dataset)".into()));
    }
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset not found: {}", path.display())));
    }
    let table = load_ratings(path, &config.ratings_format())?;
    let split = split_per_user(&table, &config.split_config())?;
    log::info!(
        "{} users, {} items, {} ratings, {} users kept",
        table.num_users(),
        table.num_items(),
        table.ratings.len(),
        split.shards.len()
    );
    Ok(PreparedData { table, split })
}

/// Trains from scratch and writes all artifacts into `config.out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<(TrainSummary, TrainLog), CliError> {
    let data = prepare_data(config)?;
    let dims = config.model_dims(data.table.num_users(), data.table.num_items());
    let server = init_server(&dims, config.train_config(), &data.split.shards)?;
    let (server, log) = train(server, &data.split.shards)?;

    let valid = global_evaluate(&server.theta, &data.split.shards, Chunk::Valid)?;
    let test = global_evaluate(&server.theta, &data.split.shards, Chunk::Test)?;
    let summary = TrainSummary {
        seed: config.seed,
        variant: config.train.variant.to_string(),
        rounds: log.rows().last().map_or(0, |r| r.round),
        best_round: log.best_round,
        stopped_early: log.stopped_early,
        valid,
        test,
    };

    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), config.seed.to_string());
    meta.insert("best_round".to_string(), log.best_round.to_string());
    checkpoint::save(&out.join(CHECKPOINT_FILE), &server.theta, &meta)?;
    fs::write(out.join(LOG_FILE), log.to_csv(config.train.log_wall_time))?;
    fs::write(
        out.join(METRICS_FILE),
        serde_json::to_string_pretty(&summary).expect("summary is serializable"),
    )?;
    fs::write(out.join(CONFIG_FILE), config.to_toml())?;
    write_shard_manifest(&data.table, &data.split, &out.join(MANIFEST_FILE))?;
    Ok((summary, log))
}

fn load_matching_checkpoint(path: &Path, data: &PreparedData) -> Result<MetaParams, CliError> {
    let ckpt = checkpoint::load(path)?;
    let dims = &ckpt.theta.dims;
    if dims.num_users != data.table.num_users() || dims.num_items != data.table.num_items() {
        return Err(CliError::Runtime(metamf::Error::Dimension(format!(
            "checkpoint was trained on {} users and {} items but the dataset has {} users and {} items",
            dims.num_users,
            dims.num_items,
            data.table.num_users(),
            data.table.num_items()
        ))));
    }
    Ok(ckpt.theta)
}

/// Re-splits the dataset from `config` and reports metrics of the checkpoint on `chunk`.
pub fn cmd_evaluate(config: &RunConfig, checkpoint_path: &Path, chunk: Chunk) -> Result<Metrics, CliError> {
    let data = prepare_data(config)?;
    let theta = load_matching_checkpoint(checkpoint_path, &data)?;
    Ok(global_evaluate(&theta, &data.split.shards, chunk)?)
}

/// What `cmd_export` writes per user.
#[derive(Debug, Clone)]
pub struct ExportRequest {
    pub checkpoint: PathBuf,
    /// Raw user ids; empty means every user.
    pub users: Vec<String>,
    /// Raw item id whose generated embedding is exported.
    pub item: String,
    pub out: PathBuf,
}

/// Writes rows `user_id,kind,values...` with kinds `layer1_weights` (row-major)
/// and `item_embedding`.
pub fn cmd_export(config: &RunConfig, req: &ExportRequest) -> Result<usize, CliError> {
    let data = prepare_data(config)?;
    let theta = load_matching_checkpoint(&req.checkpoint, &data)?;
    let item = data
        .table
        .item_index(&req.item)
        .ok_or_else(|| CliError::Usage(format!("unknown item id {:?}", req.item)))?;
    let users: Vec<(String, usize)> = if req.users.is_empty() {
        data.table.user_ids.iter().cloned().zip(0..).collect()
    } else {
        req.users
            .iter()
            .map(|raw| {
                data.table
                    .user_index(raw)
                    .map(|u| (raw.clone(), u))
                    .ok_or_else(|| CliError::Usage(format!("unknown user id {raw:?}")))
            })
            .collect::<Result<_, _>>()?
    };

    if let Some(parent) = req.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(&req.out)
        .map_err(csv_error)?;
    for (raw, u) in &users {
        let (phi, _) = generate_model(&theta, *u)?;
        let mut row = vec![raw.clone(), "layer1_weights".to_string()];
        row.extend(phi.layers[0].weights.as_slice().iter().map(f64::to_string));
        writer.write_record(&row).map_err(csv_error)?;
        let mut row = vec![raw.clone(), "item_embedding".to_string()];
        row.extend(phi.item_embeddings.col_to_vec(item).iter().map(f64::to_string));
        writer.write_record(&row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(users.len())
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}
