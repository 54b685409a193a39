use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node index {index} out of range (num_nodes = {num_nodes}) in {context}")]
    NodeOutOfRange {
        index: usize,
        num_nodes: usize,
        context: String,
    },

    #[error("split references unknown node {0}")]
    UnknownSplitNode(usize),

    #[error("duplicate node id {0:?}")]
    DuplicateNodeId(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("graph has no edge weights; call normalize_adjacency first")]
    MissingWeights,

    #[error("missing firing rate for AC layer {0:?}")]
    MissingRate(String),

    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
