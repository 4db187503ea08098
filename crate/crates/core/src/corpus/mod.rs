//! Corpus storage and synthesis.
//!
//! Three on-disk artifacts make up a corpus:
//!
//! - feature files (`.efea`): a 16-byte header (`EFEA`, version, count, dim)
//!   followed by row-major little-endian `f32` frames,
//! - a line-delimited JSON manifest, one [`Utterance`] per line,
//! - optional frame-class sidecars (`.cls`), one class index per line with
//!   `-1` marking blank frames.
//!
//! Relative paths inside a manifest resolve against the manifest's directory.

mod features;
mod manifest;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use features::{read_features, write_features, FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{
    manifest_string, read_frame_classes, read_manifest, write_frame_classes, write_manifest, Dataset, Utterance,
    BLANK_CLASS,
};
pub use synth::{alphabet, corrupt_label, generate_corpus, SynthSpec, CENTROIDS_FILE, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"EFEA\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported feature file version {found} (expected {FEATURE_VERSION})")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: u64 },
    #[error("feature dimension must be positive")]
    ZeroDim,
    #[error("frame data of length {len} is not a multiple of dim {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("non-finite value at frame {frame}, component {component}")]
    NonFinite { frame: usize, component: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("frame index {index} out of range for {count} frames")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate utterance id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}: sidecar has {found} entries but features have {expected} frames")]
    SidecarLength {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {wanted} centroids with pairwise similarity in [{lo}, {hi}] at dim {dim} after {attempts} attempts")]
    InfeasibleBand {
        wanted: usize,
        lo: f64,
        hi: f64,
        dim: usize,
        attempts: usize,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
