use thiserror::Error;

use crate::glm::GlmParams;

/// Errors produced by the spike-train, model, kernel and fitting layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("gradient undefined: intensity reached the cap at bin {bin}")]
    GradientUndefined { bin: usize },

    #[error("kernel contract violated: {0}")]
    Contract(String),

    #[error("optimization failed at iteration {iteration}: {msg}")]
    Optimization {
        iteration: usize,
        msg: String,
        last_finite: Box<GlmParams>,
    },

    #[error("runaway optimization at iteration {iteration}: {excluded} of {total} model samples hit the intensity cap")]
    RunawayOptimization {
        iteration: usize,
        excluded: usize,
        total: usize,
    },

    #[error("no alpha in the grid matched the data firing rate within the tolerance band")]
    NoQualifyingAlpha(Box<crate::mmd::AlphaScanReport>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
