use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, token {token:?}: {message}")]
    Parse {
        line: usize,
        token: String,
        message: String,
    },

    #[error("invalid query: {0}")]
    Query(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid shift: {0}")]
    InvalidShift(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("model too large: {states} joint states exceed the limit of {limit}")]
    Capacity { states: f64, limit: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
