use thiserror::Error;

/// Errors produced by the pose-posterior pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient shapes: need at least 2, got {0}")]
    InsufficientShapes(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty silhouette")]
    EmptySilhouette,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// Whether this error came from bad input rather than from arithmetic
    /// or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InsufficientShapes(_)
                | Error::DimensionMismatch { .. }
                | Error::EmptySilhouette
                | Error::Empty(_)
                | Error::Invalid(_)
                | Error::Format(_)
                | Error::Json(_)
        ) || matches!(self, Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
