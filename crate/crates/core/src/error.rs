use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the metamf library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate rating for user {user:?} and item {item:?} at line {line}")]
    DuplicateRating {
        user: String,
        item: String,
        line: usize,
    },

    #[error("ratings file {0} contains no ratings")]
    EmptyTable(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("generation would need {needed} bytes per user, budget is {budget}")]
    Capacity { needed: u64, budget: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("device {user} failed: {message}")]
    Device { user: usize, message: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
