use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric: max |A[i][j] - A[j][i]| = {max_asym:e} exceeds {tol:e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite value or non-positive curvature inside an iterative solver.
    #[error("numerical breakdown in {context} at iteration {iteration}: {reason}")]
    Breakdown {
        context: String,
        iteration: usize,
        reason: String,
    },

    #[error("jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that stem from arithmetic (solver breakdown, divergence,
    /// eigensolver failure) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Breakdown { .. } | Error::NoConvergence { .. } | Error::Diverged { .. }
        )
    }
}
