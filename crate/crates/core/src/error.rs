use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite even after diagonal jitter")]
    NotSpd,
    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),
    #[error("QP solver hit {iterations} iterations (KKT residual {residual:.3e})")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("projection direction has zero variance over the pool")]
    InvalidProjection,
    #[error("covariate-shift split left the {0} side empty")]
    EmptySplit(&'static str),
    #[error("need at least 2 classes, got k={0}")]
    InvalidK(usize),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature indices not ascending at line {0}")]
    NonAscendingIndex(usize),
    #[error("ragged rows: line {line} has {found} cells, expected {expected}")]
    RaggedRows {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("non-numeric cell at row {row}, column {col}: {cell:?}")]
    NonNumericCell { row: usize, col: usize, cell: String },
    #[error("too few points: requested {requested}, available {available}")]
    TooFewPoints { requested: usize, available: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("loss {0} does not match the task or predictor output")]
    TaskMismatch(String),
    #[error("loss {0} is not supported by this fitter")]
    UnsupportedLoss(String),
    #[error("loss {0} is not differentiable")]
    NonDifferentiable(String),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("upper-bound check needs oracle importance weights")]
    RequiresOracle,
    #[error("invalid layer index {0}")]
    BadLayer(usize),
    #[error("contrastive learning needs at least two domains")]
    NeedTwoDomains,
    #[error("mechanism is singular")]
    SingularMechanism,
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
