use std::path::PathBuf;

use thiserror::Error;

use crate::Vec3;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid streamline: {0}")]
    InvalidStreamline(String),

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("fiber has zero total chord length")]
    DegenerateFiber,

    #[error("cosine series fit is rank deficient: {0}")]
    RankDeficient(String),

    #[error("fiber {index}: {source}")]
    Fiber {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("arc-length fraction {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("empty cross-section at point ({:.4}, {:.4}, {:.4}){}", .point.x, .point.y, .point.z,
        .sample.map(|m| format!(" (sample {m})")).unwrap_or_default())]
    EmptyCrossSection { point: Vec3, sample: Option<usize> },

    #[error("unknown scalar channel `{0}`")]
    UnknownChannel(String),

    #[error("channel mismatch: `{0}` vs `{1}`")]
    ChannelMismatch(String, String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("gradient descent stalled at ({:.4}, {:.4}) after {steps} steps", .at[0], .at[1])]
    StalledDescent { at: [f64; 2], steps: usize },

    #[error("subject {index}: {source}")]
    Subject {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line} (byte offset {offset}): {message}")]
    Parse {
        line: usize,
        offset: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("count mismatch: declared {declared} {what}, found {found}")]
    CountMismatch {
        what: &'static str,
        declared: usize,
        found: usize,
    },

    #[error("validation error in fiber {fiber}, channel `{channel}`: {message}")]
    Validation {
        fiber: usize,
        channel: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad input (as opposed to numerical breakdown).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidStreamline(_)
            | Error::InvalidBundle(_)
            | Error::UnknownChannel(_)
            | Error::ChannelMismatch(..)
            | Error::LengthMismatch(..)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::VersionMismatch { .. }
            | Error::CountMismatch { .. }
            | Error::Validation { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::OutOfRange(_) => true,
            Error::Fiber { source, .. } | Error::Subject { source, .. } => source.is_validation(),
            Error::DegenerateFiber
            | Error::RankDeficient(_)
            | Error::EmptyCrossSection { .. }
            | Error::StalledDescent { .. } => false,
        }
    }
}
