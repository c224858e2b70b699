use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand shapes do not conform.
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Static operator configuration is invalid (even kernel, zero pooling factor, ...).
    #[error("{op}: configuration error: {detail}")]
    Config { op: &'static str, detail: String },

    /// Input is mathematically degenerate for the operator (zero-norm row, ...).
    #[error("{op}: degenerate input: {detail}")]
    Degenerate { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// Caller violated an API contract (non-scalar backward, unknown node, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tensor format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Config {
            op,
            detail: detail.into(),
        }
    }
}
