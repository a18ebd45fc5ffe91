use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const GEOMETRY: i32 = 3;
    pub const CONVERGENCE: i32 = 4;
    pub const IO: i32 = 5;
    pub const CONSISTENCY: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("solver failure: {0}")]
    Convergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("artifact mismatch: {0}")]
    Consistency(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Geometry(_) => exit::GEOMETRY,
            CliError::Convergence(_) => exit::CONVERGENCE,
            CliError::Io(_) => exit::IO,
            CliError::Consistency(_) => exit::CONSISTENCY,
        }
    }
}

impl From<ctdict::Error> for CliError {
    fn from(e: ctdict::Error) -> Self {
        use ctdict::Error as E;
        let msg = e.to_string();
        match e {
            E::Dimension(_) | E::UnsupportedGeometry(_) | E::InsufficientData { .. } => {
                CliError::Geometry(msg)
            }
            E::InvalidParameter(_) => CliError::Config(msg),
            E::Diverged { .. } | E::Factorization(_) => CliError::Convergence(msg),
            E::Format(_) | E::Io(_) => CliError::Io(msg),
            E::Consistency(_) => CliError::Consistency(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
