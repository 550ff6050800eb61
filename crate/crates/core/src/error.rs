use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-facing input was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The measurement map cannot resolve the requested observables.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// An estimated allocation exceeds the configured memory cap.
    #[error("resource limit: {0}")]
    Resource(String),

    /// Linear algebra or probability bookkeeping broke down.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// File or serialization problem in persistence paths.
    #[error("io error: {0}")]
    Io(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
