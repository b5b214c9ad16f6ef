use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("not a rotation matrix: {0}")]
    NotRotation(String),

    #[error("normalizer overflow guard: max |s_i| = {max_abs} exceeds {limit}")]
    NormalizerOverflow { max_abs: f64, limit: f64 },

    #[error(
        "rejection sampler acceptance rate {rate:.3e} is below {floor:.0e}; \
         reduce the concentration (keep kappa <= ~200)"
    )]
    ConcentrationTooHigh { rate: f64, floor: f64 },

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("invalid skin weights at row {row}: {reason}")]
    InvalidWeights { row: usize, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("degenerate scale {0:e} (must exceed 1e-8)")]
    DegenerateScale(f64),

    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),

    #[error("invalid candidate set: {0}")]
    InvalidCandidates(String),

    #[error("k = {k} out of range for {points} points")]
    KOutOfRange { k: usize, points: usize },

    #[error("neighborhood has {got} points, need at least {need}")]
    NeighborhoodTooSmall { got: usize, need: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("image dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown scene '{0}' (expected arm2, chain4, humanoid24 or creased_sheet)")]
    UnknownScene(String),

    #[error("stage '{stage}' failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Input problems (bad files, bad parameters) as opposed to internal failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => {
                matches!(source.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData)
            }
            Error::NormalizerOverflow { .. } | Error::ConcentrationTooHigh { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => true,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.to_string(), line, message: message.into() }
    }
}
