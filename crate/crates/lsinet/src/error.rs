use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input outside an op's mathematical domain (e.g. log of a non-positive).
    #[error("domain error: {0}")]
    Domain(String),
    /// API used outside its contract (non-scalar loss, missing graph, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
