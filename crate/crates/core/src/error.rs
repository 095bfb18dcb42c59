use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entropic index {0} is outside (-inf, 3)")]
    InvalidIndex(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("episode already finished at step {0}")]
    EpisodeFinished(usize),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
