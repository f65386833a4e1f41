use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("volume format: {0}")]
    Format(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("config: {0}")]
    Config(String),
    #[error("generation: {0}")]
    Generation(String),
    #[error("quarantine: {0}")]
    Quarantine(String),
    #[error(transparent)]
    Core(#[from] mmsurv_core::CoreError),
    #[error(transparent)]
    Stats(#[from] mmsurv_stats::StatsError),
    #[error(transparent)]
    Tensor(#[from] mmsurv_autodiff::TensorError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
