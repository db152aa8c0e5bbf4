use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pattern-mining and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Configuration values are inconsistent or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A stage produced nothing usable for the next one.
    #[error("pipeline error: {0}")]
    Pipeline(String),

    /// Broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
