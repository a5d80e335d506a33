use thiserror::Error;

/// Error type shared by all core modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or input file (maps to exit code 2 in the CLI).
    #[error("configuration error: {0}")]
    Config(String),

    /// A domain precondition was violated (nonpositive conductivity, bad shapes, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API contract (dimension mismatch, negative singular values, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure: singular system, non-finite values, divergence.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training diverged; carries the per-epoch history recorded so far as
    /// (epoch, train_loss, val_loss, learning_rate).
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, history: Vec<(usize, f64, f64, f64)> },

    /// Malformed or truncated data file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
