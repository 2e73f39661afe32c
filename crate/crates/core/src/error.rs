use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region {height}x{width} too small for {op}")]
    RegionTooSmall {
        op: &'static str,
        height: usize,
        width: usize,
    },

    #[error("no valid (non-ignored) pixels for loss")]
    NoValidPixels,

    #[error("loss became non-finite at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn rank(op: &'static str, expected: usize, shape: &[usize]) -> Self {
        Error::Rank {
            op,
            expected,
            shape: shape.to_vec(),
        }
    }
}
