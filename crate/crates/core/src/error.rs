use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsigned geometry: point cloud has no normals and no mesh is available")]
    UnsignedGeometry,

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate rotation: decoded quaternion norm {0:e} is below 1e-6")]
    DegenerateRotation(f64),

    #[error("invalid start: wrist penetrates the object (depth {0:.4} m)")]
    InvalidStart(f64),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("invalid hand model: {0}")]
    HandModel(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
