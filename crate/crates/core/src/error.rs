use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid time range [{start}, {end}) for series of length {len}")]
    InvalidTimeRange { start: usize, end: usize, len: usize },

    #[error("malformed period boundaries: {0}")]
    InvalidBoundaries(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid covariance statistics: {0}")]
    InvalidStats(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid assignments: {0}")]
    InvalidAssignments(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
