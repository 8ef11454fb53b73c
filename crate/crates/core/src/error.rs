use thiserror::Error;

use crate::contact::{ContactProblem, ImpulseSolution};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {message} (condition estimate {condition_estimate:.3e})")]
    Numerical {
        message: String,
        condition_estimate: f64,
    },

    /// The impulse solver ran out of iterations. Carries the offending problem so it
    /// can be archived and replayed.
    #[error("contact solver did not converge after {} iterations (residual {:.3e})", .0.last.diagnostics.iterations, .0.last.diagnostics.final_residual)]
    NonConvergence(Box<NonConvergence>),

    #[error("allocation infeasible: {0}")]
    Infeasible(String),

    #[error("step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub problem: ContactProblem,
    pub last: ImpulseSolution,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Strips any `Step` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
