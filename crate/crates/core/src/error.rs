use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Bad grid/tolerance/parameter combination detected before solving.
    #[error("configuration error: {0}")]
    Config(String),
    /// Parameter outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// Iterative or direct solver did not produce an admissible answer.
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Config(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Domain(msg.into()))
}

pub(crate) fn solver<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Solver(msg.into()))
}
