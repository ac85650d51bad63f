//! Error type shared by every module in the crate.
//!
//! Each variant carries enough context to be actionable from a CLI message
//! alone (tensor name, file path, offending value). [`Error::category`]
//! buckets variants into the three stable failure classes the CLI maps to
//! exit codes: validation (1), I/O (2), numeric (3).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class; stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed input: bad container layout, bad recipe, bad argument.
    Validation,
    /// The operating system failed us: missing file, permissions, disk.
    Io,
    /// Non-finite values detected in tensor data.
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed container header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("tensor {name:?} has unknown dtype tag {tag:?}")]
    UnknownDtype { name: String, tag: String },

    #[error("invalid record for tensor {name:?}: {detail}")]
    BadRecord { name: String, detail: String },

    #[error("tensors {first:?} and {second:?} have overlapping data offsets")]
    OverlappingOffsets { first: String, second: String },

    #[error("gap in data region before tensor {name:?}: expected offset {expected}, found {found}")]
    GappedOffsets {
        name: String,
        expected: u64,
        found: u64,
    },

    #[error("truncated container {path}: data region needs {needed} bytes, only {available} present")]
    Truncated {
        path: PathBuf,
        needed: u64,
        available: u64,
    },

    #[error("container {path} has {extra} trailing bytes past the data region")]
    TrailingData { path: PathBuf, extra: u64 },

    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },

    #[error("invalid tensor name {name:?}: {reason}")]
    InvalidName { name: String, reason: String },

    #[error("tensor {name:?}: shape implies {expected} elements but {found} were supplied")]
    LengthMismatch {
        name: String,
        expected: u64,
        found: u64,
    },

    #[error("write out of order: planned tensor {expected:?} next, got {found:?}")]
    InvalidWrite { expected: String, found: String },

    #[error("unknown tensor {name:?}")]
    UnknownTensor { name: String },

    #[error("tensor {name:?} has non-arithmetic dtype {dtype}")]
    NonArithmetic { name: String, dtype: String },

    #[error("incompatible checkpoints ({context}): {detail}")]
    Incompatible { context: String, detail: String },

    #[error("{path} has role {found:?}, expected {expected:?}")]
    RoleMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("tensor {name:?} contains {count} non-finite element(s)")]
    NonFinite { name: String, count: u64 },

    #[error("invalid omega: {detail}")]
    InvalidOmega { detail: String },

    #[error("invalid recipe: {detail}")]
    Recipe { detail: String },

    #[error("method {method} requires exactly one skill")]
    ExactlyOneSkillRequired { method: String },

    #[error("{detail}")]
    InvalidInput { detail: String },

    #[error("sweep values {a} and {b} both format to output suffix {suffix:?}")]
    SweepCollision { a: f64, b: f64, suffix: String },

    #[error("output {path} already exists (pass force to overwrite)")]
    OutputExists { path: PathBuf },

    #[error("unknown suite {name:?}")]
    UnknownSuite { name: String },

    #[error("invalid override {key:?}: {detail}")]
    InvalidOverride { key: String, detail: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::NonFinite { .. } => ErrorCategory::Numeric,
            _ => ErrorCategory::Validation,
        }
    }

    /// Attach a path to a raw `std::io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
