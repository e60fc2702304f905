use thiserror::Error;

/// Errors surfaced by the numerics layer.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("non-finite value at index {index} ({value}) in {context}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
}

/// Errors from dataset ingestion and serialization.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown feature id {0} (vocabulary has {1} entries)")]
    UnknownFeature(u32, usize),
    #[error("split ratios must sum to 1, got {0}")]
    BadSplit(f64),
    #[error("bad cache file {path}: {msg}")]
    BadCache { path: String, msg: String },
}

/// Top-level error for training, evaluation and the CLI.
#[derive(Debug, Error)]
pub enum HirsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss in component `{component}` at epoch {epoch}, batch {batch}")]
    NanLoss {
        component: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = HirsError> = std::result::Result<T, E>;
