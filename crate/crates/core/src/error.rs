use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the shape-space routines.
#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: all landmarks coincide")]
    DegenerateConfiguration,

    #[error("points are antipodal (distance {distance}), logarithm undefined")]
    AntipodalPoints { distance: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("Frechet mean did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("covariance matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("target distance {target} is not reachable (maximum found {reachable})")]
    UnreachableDistance { target: f64, reachable: f64 },

    #[error("too few points: need at least {needed}, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("degenerate chord: polyline has no bend to place landmarks on")]
    DegenerateChord,

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ShapeError {
    /// True for errors caused by the numerical state of the data rather than
    /// by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ShapeError::SingularCovariance { .. }
                | ShapeError::NoConvergence { .. }
                | ShapeError::AntipodalPoints { .. }
                | ShapeError::DimensionMismatch { .. }
                | ShapeError::UnreachableDistance { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ShapeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = ShapeError> = std::result::Result<T, E>;
