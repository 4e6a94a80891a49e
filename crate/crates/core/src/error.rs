use thiserror::Error;

/// Errors raised by estimators, builders and parsers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or out-of-range configuration.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A point or probability outside the admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Perturbations exceed the validity region `beta_max * h_j * sigma <= 1/2`.
    #[error("perturbation bound violated on coordinate {coordinate}: beta_max*h*sigma = {value:.6} > 0.5 (try a smaller bandwidth prefactor)")]
    StepBound { coordinate: usize, value: f64 },

    /// The constraint matrix is singular (or numerically so).
    #[error("singular constraint system: rows with exponents {exponents:?} are linearly dependent")]
    Singular { rows: Vec<usize>, exponents: Vec<u32> },

    /// Model outputs do not line up with a design.
    #[error("alignment error: expected {expected} outputs, got {got}")]
    Alignment { expected: usize, got: usize },

    /// Malformed textual input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Prefixes the message of parameter and domain errors with `what`.
    pub(crate) fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            Error::Parameter(m) => Error::Parameter(format!("{what}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{what}: {m}")),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Alignment { .. } | Error::Parse { .. } => 2,
            Error::Domain(_) | Error::StepBound { .. } => 3,
            Error::Singular { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
