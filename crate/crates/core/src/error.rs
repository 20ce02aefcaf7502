use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward: loss is detached from any tape operation")]
    Detached,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("no attack targets")]
    NoAttackTargets,
    #[error("{path}: expected magic 0x{expected:08x}, found 0x{found:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file, needed {needed} bytes at offset {offset} but file has {len}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("{0}")]
    Format(String),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {}",
        format_norms(.layer_norms)
    )]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        layer_norms: Vec<(String, f64)>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_norms(norms: &[(String, f64)]) -> String {
    norms
        .iter()
        .map(|(name, n)| format!("{name}={n:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
