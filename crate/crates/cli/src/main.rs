use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metamf::dataset::Chunk;
use metamf::metanet::Variant;
use metamf_cli::commands::CHECKPOINT_FILE;
use metamf_cli::{cmd_evaluate, cmd_export, cmd_train, CliError, ExportRequest, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "metamf", version, about = "Federated meta matrix factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ratings file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    max_rounds: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoint, log, metrics, resolved config and shard manifest.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Report MAE/MSE of a checkpoint on the valid or test chunk.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to checkpoint.bin in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        chunk: Chunk,
    },
    /// Write per-user generated first-layer weights and one item embedding as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated raw user ids; all users when omitted.
        #[arg(long, value_delimiter = ',')]
        users: Vec<String>,
        #[arg(long)]
        item: String,
        #[arg(long = "to")]
        to: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        seed: common.seed,
        variant: common.variant,
        out_dir: common.out.clone(),
        dataset: common.dataset.clone(),
        max_rounds: common.max_rounds,
    });
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let config = resolve(&common)?;
            let (summary, _) = cmd_train(&config)?;
            println!(
                "best round {}: valid mae {:.6} mse {:.6}, test mae {:.6} mse {:.6}; wrote {}",
                summary.best_round,
                summary.valid.mae,
                summary.valid.mse,
                summary.test.mae,
                summary.test.mse,
                config.out_dir.display()
            );
        }
        Command::Evaluate { common, checkpoint, chunk } => {
            let config = resolve(&common)?;
            let path = checkpoint.unwrap_or_else(|| config.out_dir.join(CHECKPOINT_FILE));
            let m = cmd_evaluate(&config, &path, chunk)?;
            println!("{}", serde_json::to_string(&m).expect("metrics are serializable"));
        }
        Command::Export { common, checkpoint, users, item, to } => {
            let config = resolve(&common)?;
            let path = checkpoint.unwrap_or_else(|| config.out_dir.join(CHECKPOINT_FILE));
            let n = cmd_export(
                &config,
                &ExportRequest { checkpoint: path, users, item, out: to.clone() },
            )?;
            println!("exported {n} users to {}", to.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
