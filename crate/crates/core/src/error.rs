use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite state or gradient appeared during a solve or a fit.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Validation(_) | Error::Shape(_) | Error::Io(_) | Error::Json(_))
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
