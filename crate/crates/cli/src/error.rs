use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] wentropy_core::Error),

    /// A point of a family run failed.
    #[error("run: {0}")]
    Run(String),

    #[error("trend: {0}")]
    Trend(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for bad input, 3 for numerical failure, 4 for a failed trend assertion.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) | CliError::Run(_) => 3,
            CliError::Trend(_) => 4,
        }
    }
}
