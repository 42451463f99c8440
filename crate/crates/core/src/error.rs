use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation / registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("raw data holds {actual} values but the header declares {expected}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "seed pixel {seed:?} in slice {slice} is not background (value {value} >= iso {iso}); pick another corner"
    )]
    SeedNotBackground {
        slice: usize,
        seed: (usize, usize),
        value: i32,
        iso: f64,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("only {found} correspondences survived trimming, at least 3 are required")]
    InsufficientCorrespondences { found: usize },

    #[error("unknown frame '{0}'")]
    UnknownFrame(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Wrap `self` with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Name of the outermost stage, if the error was tagged with one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
