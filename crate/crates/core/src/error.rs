use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("loss function is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("SWA state: {0}")]
    Swa(String),

    #[error("transport failure at rank {rank}: {message}")]
    Transport { rank: usize, message: String },

    #[error("rank {rank} timed out after {secs:.1}s waiting for rank {peer}")]
    Timeout { rank: usize, peer: usize, secs: f64 },

    #[error("replicas diverged by {max_diff:e} at step {step}")]
    ReplicaDivergence { step: usize, max_diff: f64 },

    #[error("training diverged (non-finite loss)")]
    Diverged,

    #[error("all runs failed for {0}")]
    AllRunsFailed(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, message: msg.into() }
    }
}
