use std::path::PathBuf;

use thiserror::Error;

/// Exit status when every requested check passed.
pub const EXIT_OK: i32 = 0;
/// Exit status when the run completed but at least one check failed.
pub const EXIT_CHECKS_FAILED: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("[{code}] {source}")]
    Library {
        code: &'static str,
        #[source]
        source: qexp_risk::Error,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use qexp_risk::Error as E;
        match self {
            CliError::Parse { .. } => 2,
            CliError::Validation(_) => 3,
            CliError::Library { source, .. } => match source {
                E::InvalidArgument(_) | E::UnsupportedPayoff(_) | E::Misuse(_) => 3,
                E::SolverFailure { .. } | E::RootFailure(_) => 4,
                E::EstimatorFailure { .. } | E::SignedDensity { .. } => 5,
            },
            CliError::Io { .. } => 7,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Module-qualified code for a library failure.
fn library_code(e: &qexp_risk::Error) -> &'static str {
    use qexp_risk::Error as E;
    match e {
        E::InvalidArgument(_) => "input/invalid_argument",
        E::UnsupportedPayoff(_) => "market_model/unsupported_payoff",
        E::Misuse(_) => "allocation/misuse",
        E::SolverFailure { .. } => "bsde_engine/solver_failure",
        E::RootFailure(_) => "risk/root_failure",
        E::EstimatorFailure { .. } => "risk/estimator_failure",
        E::SignedDensity { .. } => "measure/signed_density",
    }
}

impl From<qexp_risk::Error> for CliError {
    fn from(source: qexp_risk::Error) -> Self {
        CliError::Library {
            code: library_code(&source),
            source,
        }
    }
}
