use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("dimension mismatch at line {line}: expected {expected}, got {got}")]
    LineDimension { line: usize, expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite component in record {id:?} at index {index}")]
    NonFinite { id: String, index: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: u32 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("truncated at record {0}")]
    Truncated(u64),

    #[error("truncated header")]
    TruncatedHeader,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} has {count} records, need at least {needed}")]
    ClassTooSmall { class: u32, count: usize, needed: usize },

    #[error("class {0} has no active proxy")]
    InactiveClass(u32),

    #[error("model already finalized")]
    AlreadyFinalized,

    #[error("model not finalized")]
    NotFinalized,

    #[error("zero vector has no cosine distance")]
    ZeroVector,

    #[error("unresolved id {0:?}")]
    UnresolvedId(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("missing predictions for pair ({train}, {eval})")]
    MissingPair { train: String, eval: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
