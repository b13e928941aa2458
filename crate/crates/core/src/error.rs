use thiserror::Error;

use crate::ep::Verdict;

/// Everything that can go wrong in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("resolvent (ωI − M) is singular: condition number {cond:e}")]
    SingularResolvent { cond: f64 },

    #[error("output covariance is singular")]
    SingularCovariance,

    #[error("homodyne quadrature variance {variance:e} is degenerate")]
    DegenerateQuadrature { variance: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("|ε| ≤ γ/2: below the parametric-oscillation threshold")]
    BelowThreshold,

    #[error("operation needs {expected} modes, configuration has {found}")]
    WrongArity { expected: usize, found: usize },

    #[error("Newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("conditions solved at {point:?} but the point is classified as {verdict}, not an EP")]
    ConvergedToDiabolic { verdict: Verdict, point: [f64; 2] },

    #[error("slope fit needs at least {needed} points in the window, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("system is not stable: margin {margin:e}")]
    Unstable { margin: f64 },

    #[error("time integration did not settle within {duration} time units")]
    NotConverged { duration: f64 },

    #[error("dt = {dt} exceeds the stability limit {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("{0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
