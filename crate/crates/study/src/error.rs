use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("not found: {0}")]
    NotFound(String),

    /// Caller input outside the accepted domain.
    #[error("{0}")]
    Validation(String),

    /// A documented precondition was violated.
    #[error("{0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("store corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type StudyResult<T> = std::result::Result<T, StudyError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StudyError {
    let path = path.into();
    move |source| StudyError::Io { path, source }
}
