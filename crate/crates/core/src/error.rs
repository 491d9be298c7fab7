use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("{what} is rank deficient (rank {rank} of {dim})")]
    RankDeficient { what: String, rank: usize, dim: usize },

    #[error("{0} is singular or not positive definite")]
    Singular(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("link validation failed: {0}")]
    LinkValidation(String),

    #[error("too many failed resampled blocks: {failed} of {total}")]
    ResampleBudget { failed: usize, total: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
