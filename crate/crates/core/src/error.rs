use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid frame geometry: width={width}, height={height}")]
    InvalidFrameGeometry { width: f64, height: f64 },

    #[error("manifest parse error at line {line}, column {column}, field `{field}`: {message}")]
    ManifestParse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("reference distance is zero (ball and net centres coincide)")]
    DegenerateReference,

    #[error("ball and net were never detected in the same frame")]
    MissingReferenceObjects,

    #[error("neither ankle keypoint has positive confidence")]
    NoValidFoot,

    #[error("no frame reached the foot-to-ball threshold {threshold}")]
    NoEndpoint { threshold: f64 },

    #[error("sequence of {frames} frames is shorter than the required {required}")]
    SequenceTooShort { frames: usize, required: usize },

    #[error("no frame in [0, {endpoint}] passes the pose validity test")]
    NoValidPoseInSegment { endpoint: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("variant {variant} cannot run {operation}")]
    VariantViolation { variant: String, operation: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("frame {got} arrived after frame {previous}")]
    StreamOrder { previous: u64, got: u64 },

    #[error("provider parse error at frame {frame}: {message}")]
    ProviderParse { frame: usize, message: String },

    #[error("scenario {index} failed segmentation after {attempts} attempts: {last}")]
    GenerationFailed {
        index: usize,
        attempts: usize,
        last: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-readable class name, printed by the CLI on failure.
    pub fn class_name(&self) -> &'static str {
        match self {
            Error::InsufficientData(_) => "InsufficientData",
            Error::InvalidFrameGeometry { .. } => "InvalidFrameGeometry",
            Error::ManifestParse { .. } => "ManifestParseError",
            Error::DegenerateReference => "DegenerateReference",
            Error::MissingReferenceObjects => "MissingReferenceObjects",
            Error::NoValidFoot => "NoValidFoot",
            Error::NoEndpoint { .. } => "NoEndpoint",
            Error::SequenceTooShort { .. } => "SequenceTooShort",
            Error::NoValidPoseInSegment { .. } => "NoValidPoseInSegment",
            Error::Shape { .. } => "ShapeError",
            Error::VariantViolation { .. } => "VariantViolation",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Divergence { .. } => "DivergenceError",
            Error::Input(_) => "InputError",
            Error::StreamOrder { .. } => "StreamOrderError",
            Error::ProviderParse { .. } => "ProviderParseError",
            Error::GenerationFailed { .. } => "GenerationFailed",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "IoError",
            Error::Image { .. } => "ImageError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
