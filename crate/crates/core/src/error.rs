use std::path::PathBuf;

/// Errors produced by the segmentation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed scan: {len} bytes is not a multiple of 16")]
    MalformedScan { len: usize },
    #[error("invalid point {index}: non-finite coordinate or reflectance")]
    InvalidPoint { index: usize },
    #[error("label count mismatch: expected {expected} records, got {actual} bytes")]
    LabelCount { expected: usize, actual: usize },
    #[error("label encoding overflow at point {index}: semantic {semantic}, instance {instance}")]
    EncodingOverflow { index: usize, semantic: u32, instance: u32 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid label {label} (expected < {num_classes})")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("packing failed: {0}")]
    Packing(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("taxonomy parse error: {0}")]
    Taxonomy(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
