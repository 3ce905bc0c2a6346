use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset has no units in treatment arm {arm}")]
    MissingArm { arm: u8 },

    #[error("could not draw a dataset with both treatment arms after {attempts} attempts")]
    DegenerateDataset { attempts: usize },

    #[error("treatment arm {arm} has {found} units, need at least {required}")]
    ArmTooSmall {
        arm: u8,
        found: usize,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("linear system is singular or ill-conditioned ({0})")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
