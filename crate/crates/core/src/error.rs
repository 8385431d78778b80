use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid rate row: {0}")]
    InvalidRates(#[from] crate::ctmc::RateViolation),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("action {action} out of range for {actions} actions")]
    InvalidAction { action: usize, actions: usize },

    #[error("episode already finished; call reset")]
    EpisodeDone,

    #[error("theory check precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
