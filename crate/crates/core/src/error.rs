use mmsurv_autodiff::TensorError;
use mmsurv_stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("index {index} out of range for {len} bins")]
    BinIndex { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, CoreError>;
