use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input document, configuration or argument.
    Validation,
    /// Filesystem or stream failure.
    Io,
    /// Numerical breakdown (divergence, singular system).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid kinematic topology: {0}")]
    Topology(String),
    #[error("joint {joint}: lower limit {lo} is not below upper limit {hi}")]
    Limit { joint: String, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("rotation angle {0} is too close to pi for the principal logarithm")]
    NearPiSingularity(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("row {row} violates the limits of joint {joint}")]
    LimitViolation { row: usize, joint: usize },
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("corpus needs at least two poses for interpolation")]
    CorpusTooSmall,
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("model contains non-finite parameters")]
    NonFiniteParameters,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training loss diverged in epoch {0}")]
    DivergedLoss(usize),
    #[error("robot mismatch: {0}")]
    RobotMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("target references joint {0}, which does not exist")]
    BadTargetIndex(usize),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::DivergedLoss(_) | Error::SingularSystem | Error::NonFiniteParameters => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dims(expected, found))
    }
}
