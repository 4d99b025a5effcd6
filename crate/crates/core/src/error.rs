use std::path::PathBuf;

use crate::tensor::{Precision, Tensor};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("precision mismatch in {op}: {lhs} vs {rhs}")]
    PrecisionMismatch {
        op: &'static str,
        lhs: Precision,
        rhs: Precision,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("objective is not finite when perturbing coordinate {coordinate}")]
    NonFiniteObjective { coordinate: usize },

    /// A configuration value violated its constraint. `field` names the
    /// offending key.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// An iterate became non-finite or exceeded the divergence threshold.
    /// `last_finite` holds the last state whose coordinates were all finite.
    #[error("iteration diverged at step {step}: {reason}")]
    Divergence {
        step: usize,
        reason: String,
        last_finite: Vec<Tensor>,
    },

    #[error("backward reconstruction produced non-finite values at step {step}")]
    Reconstruction { step: usize },

    #[error("unknown variable {0} on tape")]
    UnknownVar(usize),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
