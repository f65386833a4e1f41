use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid event record: {0}")]
    InvalidRecord(String),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no comparable pairs; the metric is undefined")]
    NoComparablePairs,
    #[error("no events observed; the test is undefined")]
    NoEvents,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("Newton-Raphson did not converge after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
