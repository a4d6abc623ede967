use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("model rejected: {0}")]
    ModelRejected(String),
    #[error("horizon too small: {0}")]
    HorizonTooSmall(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("non-finite state at step {step}")]
    BlowUp { step: u64 },
    #[error("reference sample has {got} points, need at least {needed}")]
    ReferenceTooSmall { got: usize, needed: usize },
    #[error("degenerate fit: {0}")]
    FitDegenerate(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
