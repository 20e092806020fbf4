use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Every variant maps to a stable machine-readable [`Error::code`] so
/// front-ends can report failures without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label row {row} has no tags")]
    EmptyLabelRow { row: usize },

    #[error("label entry at row {row}, column {col} is {value}, expected 0 or 1")]
    InvalidLabelValue { row: usize, col: usize, value: u8 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("code entry at position {index} is {value}, expected -1 or +1")]
    NonBinaryCode { index: usize, value: f64 },

    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: malformed file: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("{path}: dimensions {found} do not match expected {expected}")]
    DimensionMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("effective delta interval is empty: {0}")]
    EmptyDeltaInterval(String),

    #[error("unknown identifier {0:?}")]
    UnknownId(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier for structured error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EmptyLabelRow { .. } => "empty_label_row",
            Error::InvalidLabelValue { .. } => "invalid_label_value",
            Error::NonFinite { .. } => "non_finite",
            Error::NonBinaryCode { .. } => "non_binary_code",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::Malformed { .. } => "malformed",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyDeltaInterval(_) => "empty_delta_interval",
            Error::UnknownId(_) => "unknown_id",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}

pub(crate) use ensure;
