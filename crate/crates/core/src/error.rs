use thiserror::Error;

/// Errors raised across the simulator, trainer and calibration code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("pixel index {index} out of range for {n_pixels} pixels")]
    PixelOutOfRange { index: usize, n_pixels: usize },

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("tail region has {found} samples, need at least {required}")]
    InsufficientTail { found: u64, required: u64 },

    #[error("computation graph: {0}")]
    Graph(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
