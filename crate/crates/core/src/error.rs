use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("time parameter must be positive, got {0}")]
    NonpositiveTime(f64),
    #[error("vector is not future-directed causal")]
    NotCausal,
    #[error("vector is not future-directed timelike")]
    NotTimelike,
    #[error("points are not causally related")]
    NotCausallyRelated,
    #[error("points are not chronologically related")]
    NotChronological,
    #[error("covector lies in the dual future cone")]
    InDualCone,
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no coupling supported on causally related pairs exists")]
    Infeasible,
    #[error("tau = {tau} outside (0, {bound})")]
    TauOutOfRange { tau: f64, bound: f64 },
    #[error("field is not finite on the evaluation box around point {point}")]
    NonFiniteField { point: usize },
    #[error("plan is not chronological: pi(I+) = {fraction}")]
    PreconditionChronological { fraction: f64 },
    #[error("i/o: {0}")]
    Io(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
