use std::path::PathBuf;

/// Errors produced by the numeric core, loaders and training drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite loss for batch example {index}")]
    NonFiniteLoss { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("input dimension {dim} exceeds the exact-Hessian oracle limit {limit}")]
    OracleLimit { dim: usize, limit: usize },

    #[error("{path}: bad magic number {found} (expected {expected})")]
    Magic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: length {len} is not a multiple of the {record}-byte record size")]
    RecordLength {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Wraps an I/O failure with the path involved.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteLoss { .. })
    }

    /// True for failures caused by malformed or missing data files.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Magic { .. }
                | Error::Truncated { .. }
                | Error::CountMismatch { .. }
                | Error::RecordLength { .. }
                | Error::Dataset(_)
                | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
