use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver configuration error: {0}")]
    SolverConfig(String),

    #[error("unknown policy `{name}` (available: {available})")]
    UnknownPolicy { name: String, available: String },

    #[error("unknown regime `{name}` (valid regimes: {valid})")]
    UnknownRegime { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
