use thiserror::Error;

/// Errors produced by estimation, model selection and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("sample set is empty")]
    EmptySamples,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point outside the domain box: coordinate {coord} scaled to {value}")]
    OutOfBox { coord: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular system at gamma = {gamma:e} (residual {residual:e})")]
    Singular { gamma: f64, residual: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("point-value estimates can only be queried at their own centers")]
    UnsupportedQuery,

    #[error("no candidate could be evaluated: {}", .failures.join("; "))]
    NoValidCandidate { failures: Vec<String> },

    #[error("unknown synthetic model id {0}")]
    UnknownModel(u32),

    #[error("denominator density underflows at point {index}")]
    Underflow { index: usize },

    #[error("reference vector has zero norm")]
    ZeroNorm,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
