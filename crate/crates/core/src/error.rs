use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("polytope is unbounded along coordinate {0}")]
    Unbounded(usize),
    #[error("polytope is empty")]
    Empty,
    #[error("parameter dimension {0} exceeds the vertex enumeration limit of 12")]
    DimensionTooLarge(usize),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("unsupported norm for this encoding: {0}")]
    UnsupportedNorm(String),
    #[error("l1 observation constraints need node dimension <= 3, got {0}")]
    UnsupportedNormForDim(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("matrix is not square ({0}x{1})")]
    NonSquare(usize, usize),
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("insufficient history: need {needed} steps, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("model assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("initial synthesis infeasible: {0}")]
    InfeasibleAtStart(String),
    #[error("empty consistent-parameter polytope at node {node:?}, step {step}: observations contradict the disturbance bound")]
    EmptyPolytope { node: Option<usize>, step: usize },
    #[error("recursive feasibility violated at step {step}: {detail}")]
    RecursiveFeasibility { step: usize, detail: String },
    #[error("disturbance bound violated at node {node}: |w| = {norm} > {bound}")]
    DisturbanceBoundViolated { node: usize, norm: f64, bound: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
