use alloc::string::String;
use thiserror::Error;

/// Errors surfaced while validating data, fitting models, or evaluating estimators.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("row {line}: {message}")]
    Row { line: usize, message: String },
    #[error("singular system in {context} (rcond estimate {rcond:.3e})")]
    SingularSystem { context: String, rcond: f64 },
    #[error("logistic separation detected in {context}: coefficient norm {norm:.2} diverging")]
    Separation { context: String, norm: f64 },
    #[error("logistic fit on one-class response in {context}")]
    OneClass { context: String },
    #[error("degenerate propensity {value:.3e} in {context}")]
    DegeneratePropensity { context: String, value: f64 },
    #[error("degenerate refit weight in {context}: sum of weights {sum:.3e}")]
    DegenerateWeight { context: String, sum: f64 },
    #[error("fold {fold} too small to fit ({size} rows)")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("missing imputations: {0}")]
    MissingImputations(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
