use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input paths. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running. Exit code 1.
    #[error(transparent)]
    Runtime(#[from] metamf::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}
