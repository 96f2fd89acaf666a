use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {triangle} (signed area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("point ({x}, {y}) lies outside the meshed domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("conflicting essential boundary values at vertex {vertex}: {first} vs {second}")]
    ConstraintConflict { vertex: usize, first: f64, second: f64 },

    #[error("decomposition infeasible: {0}")]
    DecompositionInfeasible(String),

    #[error("sensor assignment: {0}")]
    SensorAssignment(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("invalid config{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidConfig { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            line,
            message: msg.into(),
        }
    }
}
