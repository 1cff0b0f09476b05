use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lendsim::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ordering check failed: {0}")]
    OrderingFailed(String),
    #[error("{0}")]
    Other(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(lendsim::Error::Config(_)) => 3,
            CliError::Schema(_) | CliError::Core(lendsim::Error::Data(_)) => 4,
            CliError::Core(lendsim::Error::Numeric(_)) | CliError::Core(lendsim::Error::RankDeficient(_)) => 5,
            CliError::OrderingFailed(_) => 6,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }
}
