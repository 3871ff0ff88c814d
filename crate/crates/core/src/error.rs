use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The openness hypothesis failed: the flow propagation matrix is not
    /// certified to have spectral radius below one.
    #[error("spectral safety check failed: estimated spectral radius {estimate}")]
    SafetyCheckFailed { estimate: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("unstable operating point at queue {queue}: flow {flow} >= capacity {capacity}")]
    UnstableOperatingPoint {
        queue: usize,
        flow: f64,
        capacity: f64,
    },

    #[error("objective does not provide analytic partial derivatives")]
    MissingAnalyticJacobians,

    #[error("finite-difference probe for parameter {param} leaves the feasible set")]
    BoundaryProbe { param: usize },

    #[error("initial parameters are not feasible")]
    InfeasibleStart,

    #[error("line search rejected every step at iteration {iteration}")]
    AllStepsRejected { iteration: usize },

    #[error("routing is not open: node {node} has no guaranteed path to departure")]
    NotOpen { node: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures caused by the numbers (instability, divergence)
    /// rather than by malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SafetyCheckFailed { .. }
                | Error::NoConvergence { .. }
                | Error::UnstableOperatingPoint { .. }
                | Error::AllStepsRejected { .. }
                | Error::BoundaryProbe { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::SafetyCheckFailed { .. } => "SafetyCheckFailed",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::UnstableOperatingPoint { .. } => "UnstableOperatingPoint",
            Error::MissingAnalyticJacobians => "MissingAnalyticJacobians",
            Error::BoundaryProbe { .. } => "BoundaryProbe",
            Error::InfeasibleStart => "InfeasibleStart",
            Error::AllStepsRejected { .. } => "AllStepsRejected",
            Error::NotOpen { .. } => "NotOpen",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
