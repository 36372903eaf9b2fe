use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dangling parent: {level} '{name}' references parent index {parent} (only {available} available)")]
    DanglingParent {
        level: &'static str,
        name: String,
        parent: usize,
        available: usize,
    },

    #[error("duplicate {level} name '{name}'")]
    DuplicateName { level: &'static str, name: String },

    #[error("empty level: taxonomy has no {0}")]
    EmptyLevel(&'static str),

    #[error("{level} index {index} out of range (size {size})")]
    IndexOutOfRange {
        level: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid label path ({loop_idx}, {system_idx}, {fault_idx})")]
    InvalidPath {
        loop_idx: usize,
        system_idx: usize,
        fault_idx: usize,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward: {0}")]
    Backward(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported PGM variant '{0}'")]
    UnsupportedPgm(String),

    #[error("malformed PGM: {0}")]
    MalformedPgm(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    VersionMismatch(u32),

    #[error("model file truncated in tensor '{0}'")]
    Truncated(String),

    #[error("taxonomy digest mismatch: model has {expected}, taxonomy is {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("no grid point satisfies the scaling constraint")]
    NoFeasibleCoefficients,

    #[error("NaN loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Process exit codes of the command-line tool.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPATIBILITY: i32 = 3;
pub const EXIT_DATA: i32 = 4;

impl Error {
    /// 2 for configuration problems, 3 for model/taxonomy incompatibility,
    /// 4 for data and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::DanglingParent { .. }
            | Error::DuplicateName { .. }
            | Error::EmptyLevel(_)
            | Error::InvalidArgument(_)
            | Error::NoFeasibleCoefficients => EXIT_CONFIG,
            Error::BadMagic
            | Error::VersionMismatch(_)
            | Error::Truncated(_)
            | Error::DigestMismatch { .. }
            | Error::ModelFormat(_) => EXIT_COMPATIBILITY,
            Error::IndexOutOfRange { .. }
            | Error::InvalidPath { .. }
            | Error::Shape { .. }
            | Error::NonFinite(_)
            | Error::Backward(_)
            | Error::UnsupportedPgm(_)
            | Error::MalformedPgm(_)
            | Error::Data(_)
            | Error::NanLoss { .. }
            | Error::Io { .. }
            | Error::Csv(_) => EXIT_DATA,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
