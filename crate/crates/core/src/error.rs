use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("map is not invertible: {0}")]
    NotInvertible(String),
    #[error("enclosure did not converge within depth {depth} (best diameter {best})")]
    NonConvergence { depth: u32, best: String },
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("continuum of periodic points: {0}")]
    NonIsolated(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("construction failed: {constraint}")]
    Construction { constraint: String },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn construction(constraint: impl Into<String>) -> Self {
        Error::Construction { constraint: constraint.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Invalid(_) | Error::Json(_) => 2,
            Error::Budget(_) | Error::NonConvergence { .. } => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
