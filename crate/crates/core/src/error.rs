use thiserror::Error;

/// Errors raised by the numerical laboratory.
///
/// The variants map onto the CLI exit-code contract: input and config
/// problems are usage errors, `Hypothesis` means a theorem's premises were not
/// met (no claim is made), and `InvariantViolation` means a certified bound
/// failed, which can only be an implementation bug.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("hypothesis `{name}` not met: {detail}")]
    Hypothesis { name: String, detail: String },

    #[error("geometry infeasible: {condition} ({detail})")]
    Infeasible { condition: String, detail: String },

    #[error("certified bound violated: {0}")]
    InvariantViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short class name: `input`, `hypothesis`, `invariant`, `config`, `io`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Singular { .. } | Error::Infeasible { .. } => {
                "input"
            }
            Error::Hypothesis { .. } => "hypothesis",
            Error::InvariantViolation(_) => "invariant",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn hypothesis(name: &str, detail: impl Into<String>) -> Self {
        Error::Hypothesis {
            name: name.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
