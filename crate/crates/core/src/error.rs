use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ReidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReidError {
    #[error("empty domain")]
    EmptyDomain,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed metadata: {message}")]
    Metadata {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },

    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),

    #[error("blob length mismatch: expected {expected} bytes, found {found}")]
    BlobLengthMismatch { expected: u64, found: u64 },

    #[error("record count mismatch: header says {header}, found {found} metadata lines")]
    CountMismatch { header: usize, found: usize },

    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate record_id {0}")]
    DuplicateRecordId(u64),

    #[error("duplicate row {0}")]
    DuplicateRow(usize),

    #[error("row out of range: row {row} >= count {count}")]
    RowOutOfRange { row: usize, count: usize },

    #[error("dimension must be positive")]
    ZeroDim,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate std: {0:?}")]
    DegenerateStd([f64; 3]),

    #[error("empty collection")]
    EmptyCollection,

    #[error("insufficient identities: need {needed}, have {available}")]
    InsufficientIdentities { needed: usize, available: usize },

    #[error("no valid queries")]
    NoValidQueries,

    #[error("empty gallery")]
    EmptyGallery,

    #[error("rank {rank} out of range 1..={len}")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("no relevant items (|R| = 0)")]
    NoRelevant,

    #[error("scenario {scenario}: {message}")]
    Scenario { scenario: String, message: String },

    #[error("config errors:\n{}", .0.join("\n"))]
    ConfigParse(Vec<String>),

    #[error("{0}")]
    Other(String),
}

impl ReidError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReidError::Io {
            path: path.into(),
            source,
        }
    }
}
