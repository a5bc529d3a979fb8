use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{0}: no such file")]
    NotFound(PathBuf),
    #[error("{path}: unsupported or corrupt image ({reason})")]
    Unsupported { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("png encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Image(#[from] supercap_core::ImageError),
}

/// Errors from the binary feature, label, and checkpoint formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("file ends inside the header")]
    TruncatedHeader,
    #[error("file ends inside record {index}")]
    TruncatedRecord { index: usize },
    #[error("malformed file: {0}")]
    Invalid(String),
    #[error("read failed: {0}")]
    Read(io::Error),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image {id}: {problem}")]
    Schema { id: String, problem: String },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> FormatError {
    let path = path.into();
    move |source| FormatError::Io { path, source }
}
