use crate::diffengine::EngineError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid flow architecture: {0}")]
    InvalidArch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rank-deficient data: {0}")]
    RankDeficient(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
