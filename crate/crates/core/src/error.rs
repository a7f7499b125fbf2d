use thiserror::Error;

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<ConfigIssue>),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("profile is not a ground state: {0}")]
    NotGroundState(String),

    #[error("profile has not decayed at the box edge: b(edge)/b(0) = {ratio:.3e}")]
    WrapAround { ratio: f64 },

    #[error("value {value} outside the admissible range [{lo}, {hi}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("H2 violated: dm/dE = {slope:.3e} at E = {energy}")]
    H2Violation { energy: f64, slope: f64 },

    #[error("mass curve is not monotone")]
    NonMonotone,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("non-finite or blown-up field at t = {time}")]
    BlowUp { time: f64 },

    #[error("Newton iteration diverged at iteration {iteration} (residual {residual:.3e})")]
    NewtonDivergence { iteration: usize, residual: f64 },

    #[error("field left the soliton chart: |phi|_H1 = {phi_h1:.3e} exceeds {limit:.3e}")]
    LeftChart { phi_h1: f64, limit: f64 },

    #[error("total mass {mass:.3e} below threshold")]
    MassTooSmall { mass: f64 },

    #[error("finite-difference step underflow")]
    StepUnderflow,

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("empty orbit")]
    EmptyOrbit,

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;
