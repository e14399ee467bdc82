//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes passed to a linear-algebra or model operation.
    #[error("{op}: shape mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: {what}")]
    InvalidArgument { op: &'static str, what: String },

    /// A gradient or loss stopped being a real number.
    #[error("non-finite value in {what} ({context})")]
    NonFinite { what: String, context: String },

    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated {what}: need {needed} bytes, have {have}")]
    Truncated {
        what: &'static str,
        needed: usize,
        have: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{what}: payload length {len} not divisible by record size {record}")]
    BadRecordSize {
        what: &'static str,
        len: usize,
        record: usize,
    },

    #[error("unsupported {what} version {found} (reader supports {supported})")]
    Version {
        what: &'static str,
        found: u8,
        supported: u8,
    },

    #[error("checksum mismatch in {what}: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        what: String,
        stored: u64,
        computed: u64,
    },

    #[error("class {class} not present in source data")]
    MissingClass { class: u8 },

    #[error("empty {what}")]
    Empty { what: &'static str },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
