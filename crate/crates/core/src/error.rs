use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document (config, checkpoint header, image header).
    #[error("parse error: {0}")]
    Parse(String),

    /// Input parsed but violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// Point query outside the domain of a field.
    #[error("query outside domain: {0}")]
    OutOfDomain(String),

    #[error("unsupported primitive: {0}")]
    Unsupported(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Training produced a non-finite loss; carries the per-term snapshot.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_) | Error::Validation(_) | Error::OutOfRange(_) | Error::ShapeMismatch { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
