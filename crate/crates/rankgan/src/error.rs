//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("`{op}` expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("non-finite value encountered in `{op}`")]
    NonFinite { op: String },

    #[error("non-finite loss at stage {stage}, epoch {epoch}, step {step} ({component})")]
    NonFiniteLoss {
        stage: usize,
        epoch: usize,
        step: usize,
        component: String,
    },

    #[error("parameters are frozen: {0}")]
    Frozen(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error in `{path}`: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("checkpoint `{path}` has incompatible format version {found} (supported: {supported})")]
    CheckpointVersion {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
