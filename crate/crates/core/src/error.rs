use std::path::PathBuf;

use tfgc_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{dir}: need {needed} frames, found {found}")]
    MissingFrames {
        dir: PathBuf,
        needed: usize,
        found: usize,
    },
    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("waveform of {samples} samples is shorter than one encoder hop ({hop})")]
    AudioTooShort { samples: usize, hop: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("loss diverged at epoch {epoch}, step {step}; last good checkpoint: {last_good:?}")]
    Divergence {
        epoch: usize,
        step: usize,
        last_good: Option<PathBuf>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
