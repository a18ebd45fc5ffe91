use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("insufficient data: requested {requested} dictionary columns from {available} training patches")]
    InsufficientData { requested: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver diverged after {iterations} iterations (objective {objective})")]
    Diverged { iterations: usize, objective: f64 },

    #[error("linear algebra failure: {0}")]
    Factorization(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
