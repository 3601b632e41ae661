use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("no body with id {0} in scene")]
    UnknownBody(u32),

    #[error("no camera-visible surface point on body {0}")]
    NoVisibleSurface(u32),

    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("invalid token index {0}")]
    InvalidToken(usize),

    #[error("invalid velocity sequence: {0}")]
    InvalidSequence(String),

    #[error("simulation did not converge within {0} macro-steps")]
    NotConverged(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale forward trace (trace version {trace}, params version {params})")]
    StaleTrace { trace: u64, params: u64 },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("length mismatch: {0} predictions vs {1} ground-truth sequences")]
    LengthMismatch(usize, usize),

    #[error("non-finite loss at iteration {iteration} (lr {lr:e}, batch {batch:?})")]
    NumericAbort {
        iteration: usize,
        lr: f64,
        batch: Vec<usize>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
