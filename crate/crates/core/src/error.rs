use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite gradient in {tensor} at index {index}: {value}")]
    NonFiniteGradient {
        tensor: String,
        index: usize,
        value: f64,
    },

    #[error("infeasible openness ratio {requested}: achievable range is [0, {max}]")]
    InfeasibleOpenness { requested: f64, max: f64 },

    #[error("example {0} is not in the unlabeled pool")]
    NotInPool(usize),

    #[error("IDX format error in {path} at byte offset {offset}: {message}")]
    IdxFormat {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
