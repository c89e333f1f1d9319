use thiserror::Error;

pub type Result<T, E = DemixError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DemixError {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infinite SNR: the noise vector is zero")]
    InfiniteSnr,

    #[error("{0} must be nonzero")]
    ZeroVector(&'static str),

    #[error("ground truth required: {0}")]
    MissingTruth(&'static str),

    #[error("expected {expected} alignment parameters, got {got}")]
    MissingAlignment { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dense matrix of order {order} exceeds the cap of {cap}")]
    TooLarge { order: usize, cap: usize },

    #[error("degenerate iterate: source {source_index} has a zero-norm factor")]
    DegenerateIterate { source_index: usize },

    #[error("diverged at iteration {iter} (loss {loss})")]
    Diverged { iter: usize, loss: f64 },

    #[error("leading singular triple did not converge")]
    NoConvergence,

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
