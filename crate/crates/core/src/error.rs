use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("malformed record in {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("snapshot is already normalized")]
    AlreadyNormalized,

    #[error("camera resolution {camera:?} does not match frames {frames:?}")]
    ResolutionMismatch { camera: (usize, usize), frames: (usize, usize) },

    #[error("event stream spans {available_us} us from sync, {required_us} us required")]
    SpanTooShort { required_us: u64, available_us: u64 },

    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("degenerate slice interval [{0}, {1})")]
    DegenerateInterval(u64, u64),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("solver produced a non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("timestamp {t_us} us lies outside [{start_us}, {end_us}]")]
    OutOfSpan { t_us: f64, start_us: u64, end_us: u64 },

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("frames of {found:?} are smaller than the required {required:?}")]
    TooSmall { required: (usize, usize), found: (usize, usize) },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
