use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A value falls outside the mathematical domain of an operation.
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while decoding DGDF feature files, model snapshots and their manifests.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: [u8; 4],
        found: Vec<u8>,
    },
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("manifest mismatch for `{key}`: manifest says {manifest}, file has {file}")]
    ManifestMismatch {
        key: String,
        manifest: String,
        file: String,
    },
    #[error("malformed manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("invalid field at offset {offset}: {detail}")]
    Invalid { offset: usize, detail: String },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
