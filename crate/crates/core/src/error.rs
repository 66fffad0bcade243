use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QgrError {
    #[error("invalid range: x_max ({x_max}) must exceed x_min ({x_min})")]
    InvalidRange { x_min: f64, x_max: f64 },
    #[error("grid too small: n = {0}, need at least 8 points")]
    TooSmall(usize),
    #[error("width must be positive, got {0}")]
    NonpositiveWidth(f64),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("spectral differentiation requires a periodic grid")]
    SpectralOnDirichlet,
    #[error("operator `{0}` is not Hermitian")]
    NonHermitianInput(String),
    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("linear combination needs at least one term")]
    EmptyCombination,
    #[error("invalid physical constant: {0}")]
    InvalidConstant(&'static str),
    #[error("{path}: {reason}")]
    Validation { path: String, reason: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown parameter path `{0}`")]
    UnknownParamPath(String),
    #[error("steps must be ≥ 2")]
    TooFewSteps,
}

pub type Result<T> = std::result::Result<T, QgrError>;
