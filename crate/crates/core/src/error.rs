//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: String, shapes: String },
    #[error("non-finite value rejected at tensor creation")]
    NonFinite,
    #[error("{op} of non-positive value")]
    DomainViolation { op: &'static str },
    #[error("backward output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown task id: {0}")]
    UnknownTask(String),
    #[error("parameter layout does not match scene: {0}")]
    LayoutMismatch(String),
    #[error("rope integration exploded at step {step}")]
    Explosion { step: usize },
    #[error("episode already done")]
    EpisodeDone,
    #[error("no successful demonstration within {restarts} restarts (best return {best_return})")]
    NoDemo { restarts: usize, best_return: f64 },
    #[error("empty dataset: {0}")]
    EmptyData(&'static str),
    #[error("degenerate camera pose: {0}")]
    DegeneratePose(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("point cloud cardinality mismatch: {0} vs {1}")]
    CardinalityMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
