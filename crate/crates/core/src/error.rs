use thiserror::Error;

#[derive(Debug, Error)]
pub enum KdcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KdcError>;

pub(crate) fn invalid(msg: impl Into<String>) -> KdcError {
    KdcError::InvalidArgument(msg.into())
}

pub(crate) fn shape_mismatch(expected: impl ToString, actual: impl ToString) -> KdcError {
    KdcError::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
