use thiserror::Error;

/// Errors raised by the solvers, cost constructors and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{solver} did not converge within {iterations} iterations (last residual {residual:.3e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },

    #[error("refused: {0}")]
    Refused(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("outer iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping iteration wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}
