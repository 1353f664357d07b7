use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown tap `{0}`")]
    UnknownTap(String),

    #[error("node has no samples")]
    EmptyNode,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown subclass `{0}`")]
    UnknownSubclass(String),

    #[error("dataset root {0} is missing its Training/ or Test/ split")]
    MissingSplit(PathBuf),

    #[error("test class `{0}` has no Training counterpart")]
    UnknownTestClass(String),

    #[error("class `{0}` contains no images")]
    EmptyClass(String),

    #[error("class `{0}` is too small to hold out a validation sample")]
    ClassTooSmall(String),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("format version mismatch: file has version {found}, this build reads version {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
