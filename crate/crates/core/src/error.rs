use std::path::PathBuf;

use aligned_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (file formats, manifests, shapes).
    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Training hit a non-finite value; `term` names the loss component.
    #[error("numeric abort at iteration {iteration}: {term} is not finite ({detail})")]
    NumericAbort {
        iteration: usize,
        term: String,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CoreError::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) | CoreError::Contract(_) => 2,
            CoreError::Data(_) | CoreError::Io { .. } | CoreError::Degenerate(_) => 3,
            CoreError::NumericAbort { .. } => 4,
            CoreError::Tensor(TensorError::NonFinite { .. }) => 4,
            CoreError::Tensor(TensorError::Config { .. }) => 2,
            CoreError::Tensor(TensorError::Io(_) | TensorError::Format(_)) => 3,
            CoreError::Tensor(_) => 3,
        }
    }
}

/// Attaches a path to I/O results.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| CoreError::io(path, e))
    }
}
