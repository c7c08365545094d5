use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no manifest.csv in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("malformed image {path}: {reason}")]
    MalformedImage { path: PathBuf, reason: String },
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),
    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },
    #[error("tensor {name}: shape {found:?} does not match {expected:?} implied by the config")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: u64,
        found: u64,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] photorisk_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| Error::Json { path, source }
    }
}
