//! Exit codes and the JSON error report written to stderr.

use std::path::{Path, PathBuf};

use serde_json::json;

use snakesim::Error;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// File name of the archived contact problem when the impulse solver gives up.
pub const FAILED_PROBLEM_FILE: &str = "failed_problem.json";

#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    step: Option<usize>,
    archived_problem: Option<PathBuf>,
}

impl Failure {
    pub fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
            step: None,
            archived_problem: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, "io", message)
    }

    /// Classifies a library error. Non-convergent contact problems are archived into
    /// `archive_dir` when one is given.
    pub fn from_error(e: &Error, archive_dir: Option<&Path>) -> Self {
        let message = e.to_string();
        let step = match e {
            Error::Step { index, .. } => Some(*index),
            _ => None,
        };
        let mut f = match e.root() {
            Error::Config(_) | Error::Json(_) => Self::config(message),
            Error::Io(_) => Self::io(message),
            Error::NonConvergence(_) => Self::new(EXIT_SOLVER, "non_convergence", message),
            Error::Infeasible(_) => Self::new(EXIT_SOLVER, "infeasible", message),
            Error::Numerical { .. } => Self::new(EXIT_SOLVER, "numerical", message),
            Error::InvalidInput(_) | Error::Step { .. } => {
                Self::new(EXIT_FAILURE, "invalid_input", message)
            }
        };
        f.step = step;
        if let (Error::NonConvergence(nc), Some(dir)) = (e.root(), archive_dir) {
            let path = dir.join(FAILED_PROBLEM_FILE);
            let written = serde_json::to_string_pretty(&nc.problem)
                .map_err(|e| e.to_string())
                .and_then(|text| std::fs::write(&path, text).map_err(|e| e.to_string()));
            match written {
                Ok(()) => f.archived_problem = Some(path),
                Err(err) => {
                    f.message = format!("{}; archiving the problem failed: {err}", f.message)
                }
            }
        }
        f
    }

    /// A simulation failure; solver problems are archived next to the run's artifacts.
    pub fn from_run(e: Error, out: &Path) -> Self {
        Self::from_error(&e, Some(out))
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.code,
                "message": self.message,
                "step": self.step,
                "archived_problem": self.archived_problem,
            }
        })
    }
}
