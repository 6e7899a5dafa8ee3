use thiserror::Error;

/// Error type shared across the simulation, detection and training modules.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("attack generation retry budget exhausted at epoch {epoch}")]
    RetryExhausted { epoch: usize },

    #[error("invalid channel index {channel} (have {n_channels})")]
    InvalidChannel { channel: usize, n_channels: usize },

    #[error("window underfull: have {have} steps, need {need}")]
    WindowUnderfull { have: usize, need: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
