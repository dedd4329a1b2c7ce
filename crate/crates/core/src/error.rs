use thiserror::Error;

/// Errors raised across model validation, rate evaluation, tilting, simulation
/// and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {row} of the embedded kernel sums to {sum} (tolerance {tol})")]
    RowSum { row: usize, sum: f64, tol: f64 },

    #[error("embedded kernel has an invalid entry {value} at ({row}, {col})")]
    KernelEntry { row: usize, col: usize, value: f64 },

    #[error("jump intensity q({state}) = {value} must be finite and > 0")]
    Intensity { state: usize, value: f64 },

    #[error("embedded chain is not irreducible: {0}")]
    Reducible(String),

    #[error("detailed balance violated at ({x}, {y}): flux {forward} vs {backward}")]
    NotReversible {
        x: usize,
        y: usize,
        forward: f64,
        backward: f64,
    },

    #[error("no N <= {max_steps} with a strictly positive N-step kernel; zero entries at {zeros:?}")]
    NoMinorization {
        max_steps: usize,
        zeros: Vec<(usize, usize)>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    /// `best` carries the best iterate and its objective value when the
    /// solver has one to offer.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<(Vec<f64>, f64)>>,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("tilted dynamics do not match the target measure: {0}")]
    Mismatch(String),

    #[error("target measure charges state {0} outside the support of pi")]
    DegenerateSupport(usize),

    #[error("seed {0} is reserved")]
    Seed(u64),

    #[error("state {0} has an empty transition row")]
    Unreachable(usize),

    #[error("jump budget of {0} exceeded")]
    JumpBudget(usize),

    #[error("eigensolver failure: {0}")]
    EigenFailure(String),

    #[error("importance weights collapsed: effective sample size {0:.2} < 10")]
    DegenerateWeight(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("model file: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
