use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported bit depth {0}")]
    UnsupportedBitDepth(u32),

    #[error("unsupported channel layout: {0}")]
    UnsupportedLayout(String),

    #[error("zero-sized image")]
    EmptyImage,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient pairs: need at least {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("point at infinity under homography")]
    PointAtInfinity,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no model with at least {0} inliers found")]
    NoModel(usize),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("registration failed at stage {stage}: {message}")]
    Registration {
        stage: &'static str,
        message: String,
        stats: Box<crate::pipeline::StageStats>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
