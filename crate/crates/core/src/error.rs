use std::fmt;

use crate::trajectory::Trajectory;

/// Which iterative routine gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Resolvent,
    Newton,
    DirectMinimizer,
    FixedPoint,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Solver::Resolvent => "resolvent",
            Solver::Newton => "newton",
            Solver::DirectMinimizer => "direct minimizer",
            Solver::FixedPoint => "fixed-point iteration",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WedError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: Solver,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        best: Option<Box<Trajectory>>,
    },

    #[error("fixed-point iterate left the a-priori ball: norm {norm:.3e} exceeds {limit:.3e} at iteration {iteration}")]
    Divergence {
        iteration: usize,
        norm: f64,
        limit: f64,
        history: Vec<f64>,
    },

    #[error("line search failed in {solver} at iteration {iteration}")]
    LineSearch { solver: Solver, iteration: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WedError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        WedError::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        WedError::Parameter(msg.into())
    }

    /// True for errors that mean "the iteration ran but did not settle".
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            WedError::NonConvergence { .. } | WedError::Divergence { .. } | WedError::LineSearch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, WedError>;
