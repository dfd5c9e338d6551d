use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid dimensions {nx}x{ny}: need at least 8 nodes per axis")]
    InvalidDimensions { nx: usize, ny: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("metric is not positive definite at node {node} (g11 = {g11}, det = {det})")]
    NotSpd { node: usize, g11: f64, det: f64 },
    #[error("field shape does not match chart ({expected} nodes expected, got {got})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("chart has no boundary")]
    NoBoundary,
    #[error("right-hand side violates Neumann solvability: integral {integral:e} vs scale {scale:e}")]
    IncompatibleRhs { integral: f64, scale: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("S must be positive; S = {value:e} at node ({i}, {j})")]
    NonPositiveS { i: usize, j: usize, value: f64 },
    #[error("reverse time tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("metric degenerated at node {node} (det = {det:e})")]
    MetricDegenerate { node: usize, det: f64 },
    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("time step {dt} would push tau = {tau} below zero")]
    TauUnderflow { tau: f64, dt: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
