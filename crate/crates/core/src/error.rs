use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} is not available to agent {agent}")]
    MaskedAction { agent: String, action: usize },

    #[error("state is already terminal")]
    TerminalState,

    #[error("invalid agent: {0}")]
    InvalidAgent(String),

    #[error("target out of range: distance {distance:.3} > range {range:.3}")]
    OutOfRange { distance: f64, range: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt archive {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("checkpoint does not match the requested network: {0}")]
    CheckpointShape(String),

    #[error("failed to load checkpoint {path}: {reason}")]
    CheckpointLoad { path: PathBuf, reason: String },

    #[error("map mismatch: {0}")]
    MapMismatch(String),

    #[error("resume state disagrees with config: {0}")]
    ResumeMismatch(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }
}
