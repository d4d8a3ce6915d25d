use std::path::PathBuf;

use scarcegan_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] AutodiffError),

    /// A documented precondition of an operation was violated.
    #[error("{0}")]
    Contract(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step} (p = {p}, gamma = {gamma})")]
    NonFinite {
        what: &'static str,
        step: u64,
        p: f64,
        gamma: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("incompatible transfer source:\n{0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
