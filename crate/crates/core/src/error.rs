use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("posterior has no feasible environment left")]
    EmptyPosterior,
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    InvalidLoss(Vec<usize>),
    #[error("sequence of {tokens} tokens exceeds the window limit of {limit}")]
    WindowExceeded { tokens: usize, limit: usize },
    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },
    #[error("linear program is {0}")]
    Lp(&'static str),
    #[error("non-finite loss at iteration {iteration}, batch {batch}")]
    NonFiniteLoss { iteration: usize, batch: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
