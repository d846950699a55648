//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("patch grid exceeds frame bounds: {0}")]
    GridOverflow(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid zone: {0}")]
    InvalidZone(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    // datapipe
    #[error("insufficient frames: need {needed}, have {available} for class {class}")]
    InsufficientFrames {
        class: usize,
        needed: usize,
        available: usize,
    },

    // model
    #[error("shape underflow at layer {layer}: {detail}")]
    ShapeUnderflow { layer: String, detail: String },

    // trainer
    #[error("no hyperparameter table entry for {0} training images and no override supplied")]
    UnknownSize(usize),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("zone purity violation: {0}")]
    ZonePurityViolation(String),

    // evalkit
    #[error("model expects {expected} input channels, patch set has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("depth {0} cm is not covered by any zone")]
    UncoveredDepth(f64),
    #[error("refusing to report empty results: {0}")]
    EmptyResults(String),

    // ingest
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {0}")]
    VersionUnsupported(u16),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("network error after {retries} attempts: {detail}")]
    NetworkError { retries: u32, detail: String },
    #[error("digest mismatch for {file}: expected {expected}, computed {computed}")]
    DigestMismatch {
        file: String,
        expected: String,
        computed: String,
    },
    #[error("storage error: {0}")]
    StorageError(String),
    #[error("layout mismatch in {file} at byte {offset}: {detail}")]
    LayoutMismatch {
        file: String,
        offset: u64,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
