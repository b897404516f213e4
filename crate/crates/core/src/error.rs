use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the SLAM pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error in {context}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format {
        context: String,
        line: Option<usize>,
        message: String,
    },

    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    DegenerateRotation { angle: f64 },

    #[error("normal equations are ill-conditioned (non-finite solution)")]
    IllConditioned,

    #[error("descriptor dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("node {got} added out of order, expected {expected}")]
    NonSequentialNode { expected: usize, got: usize },

    #[error("node {0} does not exist in the pose graph")]
    MissingNode(usize),

    #[error("loop constraint {from} -> {to} was not accepted")]
    UnacceptedConstraint { from: usize, to: usize },

    #[error("information matrix is not symmetric positive definite")]
    InvalidInformation,

    #[error("trajectory lengths differ: estimate has {estimate} poses, ground truth {truth}")]
    LengthMismatch { estimate: usize, truth: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
