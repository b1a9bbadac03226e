use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("malformed RLE: runs sum to {actual}, expected {expected} ({width}x{height})")]
    MalformedRle {
        width: u32,
        height: u32,
        expected: u64,
        actual: u64,
    },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("vector norm is zero or below epsilon{}", .index.map(|i| format!(" (support index {i})")).unwrap_or_default())]
    ZeroVector { index: Option<usize> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in embedding at component {0}")]
    NonFinite(usize),

    #[error("empty support set for class {0}")]
    EmptySupport(u32),

    #[error("duplicate class id {0}")]
    DuplicateClass(u32),

    #[error("prototype store is empty")]
    EmptyStore,

    #[error("missing embedding for proposal (scene {scene_id}, image {image_id}, proposal {proposal_index})")]
    MissingEmbeddings {
        scene_id: u32,
        image_id: u32,
        proposal_index: usize,
    },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("unknown image (scene {scene_id}, image {image_id})")]
    UnknownImage { scene_id: u32, image_id: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("schema violation at record {record}: {message}")]
    SchemaViolation { record: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
