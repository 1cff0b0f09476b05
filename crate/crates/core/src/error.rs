use thiserror::Error;

/// Errors raised by the simulator and the estimation tools.
///
/// The variants map onto distinct failure classes so that front ends can
/// report them with different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters or scenario settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data does not satisfy the expected schema or content.
    #[error("data error: {0}")]
    Data(String),
    /// A numerical procedure could not produce a defined result.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Design matrix columns that are linear combinations of earlier columns.
    #[error("rank-deficient design; offending columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
