use thiserror::Error;

/// Errors raised by fitting, projection and IO routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("point projects onto the sphere center; projection undefined")]
    SingularProjection,
    #[error("degenerate split: cell has zero scatter")]
    DegenerateSplit,
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("optimizer diverged: {0}")]
    Divergence(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unsupported model version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularProjection
                | Error::DegenerateSplit
                | Error::NoConvergence(_)
                | Error::Divergence(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
