use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("relevance mask needs at least one positive and one negative item")]
    DegenerateMask,

    #[error("item {0} is not a positive and cannot be ranked within the positive set")]
    NotPositive(usize),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid group structure: {0}")]
    InvalidGroups(String),

    #[error("row {row} has norm {norm:e}, below the degenerate-input floor")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: &'static str },

    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },

    #[error("truncated {what}: needed {needed} bytes, found {found}")]
    Truncated { what: &'static str, needed: usize, found: usize },

    #[error("label {label} at sample {index} is outside [0, {num_classes})")]
    LabelOutOfRange { index: usize, label: usize, num_classes: usize },

    #[error("class {class} has {count} samples, at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
