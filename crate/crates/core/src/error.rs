use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("model configuration error: {0}")]
    ModelConfig(String),

    #[error("cannot finalize an empty summary")]
    EmptySummary,

    #[error("unsupported schedule: {0}")]
    UnsupportedSchedule(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("endpoint {endpoint} unreachable: {reason}")]
    Unreachable { endpoint: String, reason: String },

    #[error("iteration {iteration}: timed out waiting for RESULT from node {node}")]
    ResultTimeout { iteration: u32, node: usize },

    #[error("delivery to node {node} failed after {attempts} attempts")]
    DeliveryFailed { node: usize, attempts: u32 },

    #[error("evaluation failed at iteration {iteration}: {source}")]
    Evaluation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
