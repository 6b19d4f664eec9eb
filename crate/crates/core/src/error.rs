use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] pst_tensor::TensorError),

    #[error("{layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: pst_tensor::TensorError,
    },

    #[error("band {low}-{high} Hz invalid for sample rate {sample_rate} Hz")]
    Band {
        low: f64,
        high: f64,
        sample_rate: f64,
    },

    #[error("recording too short: {samples} samples < {needed} needed for one slice")]
    TooShort { samples: usize, needed: usize },

    #[error("layout: {0}")]
    Layout(String),

    #[error("expected {expected} {what}, got {actual}")]
    Count {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: bad magic at byte offset {offset}: found {found:?}")]
    BadMagic {
        path: PathBuf,
        offset: usize,
        found: Vec<u8>,
    },

    #[error("non-finite {0}; step aborted")]
    NonFinite(&'static str),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn layer(name: impl Into<String>) -> impl FnOnce(pst_tensor::TensorError) -> Self {
        let layer = name.into();
        move |source| Error::Layer { layer, source }
    }
}
