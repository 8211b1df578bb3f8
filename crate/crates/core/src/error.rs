use thiserror::Error;

pub type Result<T> = std::result::Result<T, KseError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KseError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("period mismatch: {left} vs {right}")]
    PeriodMismatch { left: f64, right: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid too small: need at least {needed} points, got {got}")]
    GridTooSmall { needed: usize, got: usize },
    #[error("field not in the range of the forcing: relative residual {residual:.3e}")]
    NotInRange { residual: f64 },
    #[error("field is not odd: largest cosine coefficient {max_cos:.3e}")]
    NotOdd { max_cos: f64 },
    #[error("non-finite state at step {step}")]
    NonFinite { step: u64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("nonpositive distance at index {index}: value {value:.3e}")]
    NonpositiveDistance { index: usize, value: f64 },
    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
}
