use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the emulator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, arity, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or mutually inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration diverged at integrator step {step}")]
    IntegrationDiverged { step: usize },

    #[error("rollout diverged at lead step {step}")]
    RolloutDiverged { step: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step} of stage {stage}; last good checkpoint: {last_good:?}")]
    TrainingDiverged {
        stage: String,
        step: u64,
        last_good: Option<PathBuf>,
    },

    /// A persisted artifact failed validation (magic, truncation, checksum).
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// A metric is mathematically undefined for the given inputs.
    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
