use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    SpecMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("bad argument: {0}")]
    BadArgument(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    /// Training produced a NaN/Inf loss; the last finite checkpoint is returned.
    #[error("training diverged at step {step}")]
    TrainingDiverged {
        step: usize,
        last_good: Box<crate::advtrain::Checkpoint>,
    },

    #[error("malformed telemetry: {0}")]
    BadTelemetry(String),

    #[error("no time budget left: detection took {t_d_ms} ms of a {period_ms} ms frame period")]
    NoBudget { period_ms: f64, t_d_ms: f64 },

    #[error("format error: {0}")]
    FormatError(String),

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::SpecMismatch(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::BadArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::FormatError(msg.into())
    }
}
