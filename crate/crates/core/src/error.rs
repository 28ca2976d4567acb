use std::time::Duration;

use thiserror::Error;

use crate::alignment::AlignmentError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("oracle did not answer within {0:?}")]
    OracleTimeout(Duration),

    #[error("protocol error at byte {offset}: {message}")]
    Protocol { offset: u64, message: String },

    #[error("explanation has no generated tokens")]
    EmptyExplanation,

    #[error(transparent)]
    Alignment(#[from] AlignmentError),

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Per-example failures of a dataset run, as `(example id, message)`.
    #[error("{} example(s) failed, first {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Examples(Vec<(String, String)>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
