use std::path::PathBuf;

use thiserror::Error;

/// A rejected input, naming where it came from.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{context}: {message}")]
pub struct ValidationError {
    pub context: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            message: message.into(),
        }
    }
}

/// Numerical breakdown inside one solver stage.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericalError {
    #[error("eigen solve failed for order m={order}: {detail} (condition estimate {condition:.3e})")]
    Eigen {
        order: usize,
        detail: String,
        condition: f64,
    },
    #[error("particular solve failed for order m={order}, mu0={mu0}: {detail}")]
    Particular { order: usize, mu0: f64, detail: String },
    #[error("boundary system for order m={order} is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Boundary { order: usize, condition: f64 },
    #[error("reconstructed radiance has imaginary residue {residue:.3e} (order m={order})")]
    ImaginaryResidue { order: usize, residue: f64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] NumericalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
