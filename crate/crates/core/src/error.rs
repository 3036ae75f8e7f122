use thiserror::Error;

/// Iterate carried by a solver failure so callers can inspect how far it got.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FailedIterate {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub gap: f64,
    pub alpha: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid problem: {0}")]
    Validation(String),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        best: Option<Box<FailedIterate>>,
    },

    #[error("path has {successes} successful iterates, at least {required} needed")]
    InsufficientPath { successes: usize, required: usize },

    #[error("refusing {0}")]
    Refused(String),

    #[error("malformed problem file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical algorithms, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. } | Error::InsufficientPath { .. }
        )
    }

    pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension { expected, found })
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
