use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },

    #[error("empty sequence in {0}")]
    EmptySequence(&'static str),

    #[error("{direction} anchor {anchor} has no valid negative in the batch")]
    Mining { direction: &'static str, anchor: usize },

    #[error("class label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: parse error at byte offset {offset}: {detail}", path.display())]
    Parse { path: PathBuf, offset: u64, detail: String },

    #[error("{}: unsupported format version {found} (supported: {supported})", path.display())]
    Version { path: PathBuf, found: u32, supported: u32 },

    #[error("record {index} (pair id {pair_id}): {detail}")]
    Validation { index: usize, pair_id: u64, detail: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
