use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),

    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid surgery plan: {0}")]
    InvalidSurgery(String),

    #[error("unknown tap `{0}`")]
    UnknownTap(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("Cholesky factorization failed at pivot {pivot} (value {value:e}); covariance + ridge is not positive definite")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u16, supported: u16 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch in {section}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        section: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("dataset already normalized")]
    AlreadyNormalized,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
