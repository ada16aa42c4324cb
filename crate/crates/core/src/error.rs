use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver failed at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    Capability(String),

    /// Training diverged. Carries the last parameters for which the loss was finite.
    #[error("training failed at step {step}: {reason}")]
    Training {
        step: usize,
        reason: String,
        last_finite: Option<Box<ParamVector>>,
    },

    #[error("spectral solver: {reason} (best residuals {residuals:?})")]
    Spectral { reason: String, residuals: Vec<f64> },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("export failed: {0}")]
    Export(String),

    #[error("checkpoint {path:?}: {reason}")]
    Checkpoint { path: Option<PathBuf>, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
