//! Command-line driver for federated meta matrix factorization.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_evaluate, cmd_export, cmd_train, ExportRequest, TrainSummary};
pub use config::{Overrides, RunConfig};
pub use error::CliError;
