//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: norm {norm:e} is below the projection threshold")]
    ZeroVector { norm: f64 },

    #[error("invalid sphere dimension {d}; need d >= 2")]
    InvalidDimension { d: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("antipodal points: geodesic is not unique (dot = {dot})")]
    AntipodalPoints { dot: f64 },

    #[error("zero chunk at sphere index {index}")]
    ZeroChunk { index: usize },

    #[error("domain error in {what}: {value} outside {constraint}")]
    Domain {
        what: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("non-positive uncertainty value {value} at index {index}")]
    NonPositiveUncertainty { index: usize, value: f64 },

    #[error("non-finite gradient in parameter {name} at step {step}")]
    NonFiniteGradient { name: String, step: usize },

    #[error("non-finite loss at step {step}: {term}")]
    NonFiniteLoss { step: usize, term: String },

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("degenerate layer {index}: mean token norm {mean_norm:e} too small")]
    DegenerateLayer { index: usize, mean_norm: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
