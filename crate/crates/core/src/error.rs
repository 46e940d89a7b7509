use hmsddp_lp::SolverError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model fit failed, unobserved crossing states: {}", .missing.join(", "))]
    FitFailure { missing: Vec<String> },
    #[error("observation {value} has zero likelihood under every state ({context})")]
    DegenerateObservation { value: f64, context: String },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("solver failure at {context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: SolverError,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(path: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn solver(context: impl Into<String>, source: SolverError) -> Self {
        Error::Solver {
            context: context.into(),
            source,
        }
    }
}
