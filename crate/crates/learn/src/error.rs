use scol_mpc::MpcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A cache or gradient no longer matches the model it came from.
    #[error("stale state: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("cannot allocate split: {0}")]
    Allocation(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> LearnError {
    LearnError::Shape(msg.into())
}
