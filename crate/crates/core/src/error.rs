use thiserror::Error;

/// Failures raised by the library. Each variant maps onto one of the
/// failure classes surfaced by the command line front end.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure{}: {reason}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    SolverFailure { step: Option<usize>, reason: String },

    #[error("estimator failure: {reason} ({} offending paths)", paths.len())]
    EstimatorFailure { reason: String, paths: Vec<usize> },

    #[error("signed density: 1 + phi = {factor} at step {step}, mark {mark}, path {path}")]
    SignedDensity {
        step: usize,
        mark: usize,
        path: usize,
        factor: f64,
    },

    #[error("root finding failed: {0}")]
    RootFailure(String),

    #[error("unsupported payoff: {0}")]
    UnsupportedPayoff(String),

    #[error("misuse: {0}")]
    Misuse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
