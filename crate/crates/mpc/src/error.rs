use thiserror::Error;

pub type Result<T, E = MpcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("value {value} outside fixed-point range ±{max}")]
    Range { value: f64, max: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("correlated randomness exhausted: wanted {wanted}")]
    Exhausted { wanted: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MpcError {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        MpcError::Protocol(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        MpcError::Format(msg.into())
    }
}
