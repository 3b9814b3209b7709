use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the layer that raises them; [`Error::category`]
/// collapses them into the coarse classes the command line maps onto exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("computation graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    #[error("truncated SEG-Y data: {0}")]
    Truncated(String),
    #[error("unsupported SEG-Y sample format code {0} (supported: 1 = IBM float, 5 = IEEE float)")]
    UnsupportedFormat(u16),
    #[error("SEG-Y binary header declares zero samples per trace")]
    ZeroSamples,
    #[error("trace {trace} has {found} samples, expected {expected}")]
    InconsistentTraceLength {
        trace: usize,
        expected: usize,
        found: usize,
    },

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("unsupported version in {what}: {found}")]
    Version { what: String, found: String },
    #[error("missing tensor file {0}")]
    MissingTensor(PathBuf),
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad input data or configuration supplied by the caller.
    Data,
    /// Something went wrong while running (divergence, broken invariants).
    Runtime,
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Contract(_) | Error::GraphConsumed | Error::Divergence { .. } => {
                Category::Runtime
            }
            _ => Category::Data,
        }
    }
}
