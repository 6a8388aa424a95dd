use thiserror::Error;

/// Errors surfaced by the library and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A size guard was hit (row count overflow, brute-force limits, dense
    /// materialization limits).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Subtraction drove a nonnegative measurement below zero.
    #[error("contradiction: {0}")]
    Contradiction(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("iteration limit of {0} exceeded")]
    IterationLimit(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
