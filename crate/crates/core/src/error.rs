use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trajectory blow-up at t = {time}")]
    BlowUp { time: f64 },

    #[error("map divergence at iterate {step}")]
    MapDivergence { step: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("point ({x}, {y}) lies outside the open domain")]
    Domain { x: f64, y: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cache does not belong to the current parameters")]
    StaleCache,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("hash mismatch in {path}: expected {expected}, found {found}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
