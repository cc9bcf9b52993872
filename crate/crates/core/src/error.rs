use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Format {
        line: usize,
        column: Option<String>,
        message: String,
    },

    #[error("empty panel: no instrument covers the full date range")]
    EmptyPanel,

    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("correlation undefined: {0} is constant")]
    UndefinedCorrelation(&'static str),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("path diverged at step {step}")]
    Diverged { step: usize },

    #[error("fit did not converge after {iterations} iterations (residual {residual:.3e}, last iterate {params:?})")]
    FitFailed {
        iterations: usize,
        params: Vec<f64>,
        residual: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Diverged { .. } | Error::FitFailed { .. } | Error::UndefinedCorrelation(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
