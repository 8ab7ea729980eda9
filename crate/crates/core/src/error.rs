use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event log integrity: {0}")]
    Integrity(String),

    #[error("truncation could not reach tail tolerance {tol:e} (bound {bound:e} at index cap {cap})")]
    Truncation { tol: f64, bound: f64, cap: usize },

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("{0}")]
    Input(String),

    #[error("fit did not converge (best objective {best_objective:e} after {restarts} restarts)")]
    FitNotConverged { best_objective: f64, restarts: usize },

    #[error("scale underdetermined: {0}")]
    ScaleUnderdetermined(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
