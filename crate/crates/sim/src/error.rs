use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] mssl_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset {name:?}; available presets: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("{failed} of {total} replications failed, over the 5% budget (first failure: {first})")]
    FailureBudget { failed: usize, total: usize, first: String },

    #[error("cannot parse configuration: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("statistics: {0}")]
    Stats(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }
}
