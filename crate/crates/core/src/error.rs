use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vector component {index} is not finite")]
    NonFinite { index: usize },

    #[error("zero-norm vector cannot be used with cosine distance")]
    ZeroNorm,

    #[error("duplicate document id {0}")]
    DuplicateDocId(u64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("sample of {actual} points is too small, need at least {required}")]
    SampleTooSmall { required: usize, actual: usize },

    #[error("sample matrix has rank below 2")]
    RankDeficient,

    #[error("power iteration did not converge after {iterations} iterations (residual angle {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("ground truth has {available} entries, fewer than k = {k}")]
    TruthTooShort { k: usize, available: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn malformed(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
