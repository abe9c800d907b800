use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("bad interval [{t0}, {t1}] for horizon {horizon}")]
    BadInterval { t0: f64, t1: f64, horizon: f64 },

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("chain is reducible: states {unreachable:?} are not mutually reachable with state 0")]
    Reducible { unreachable: Vec<usize> },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unnormalized state has a nonpositive entry at index {index} ({value})")]
    NonPositive { index: usize, value: f64 },

    #[error("simplex sum drifted to {sum} before renormalization")]
    SimplexDrift { sum: f64 },

    #[error("too many clamping events: {clamps} of {steps} steps")]
    ExcessiveClamping { clamps: u64, steps: usize },

    #[error("matrix exponential overflowed for t*|A| = {scale:.3e}; use the log-domain filter instead")]
    ExponentialOverflow { scale: f64 },

    #[error("oracle precondition violated: {0}")]
    OraclePrecondition(String),

    #[error("scheme {scheme} is not applicable: {reason}")]
    SchemeMismatch { scheme: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FilterError>;
