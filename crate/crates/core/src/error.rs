use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Input uses a container or codec we do not read.
    #[error("unsupported format: {0}")]
    Format(String),
    /// Input is malformed or truncated.
    #[error("parse error: {0}")]
    Parse(String),
    /// Arguments outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    /// Every analysis window fell below the silence threshold.
    #[error("all-silent input")]
    AllSilent,
    #[error("invalid config: {0}")]
    Config(String),
    /// NaN loss, failed gradient check and similar.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(layer: usize, msg: impl Into<String>) -> Self {
        Error::Shape {
            layer,
            msg: msg.into(),
        }
    }
}
