use std::path::PathBuf;

use gaqn_autograd::GraphError;

use crate::losses::LossReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("camera outside room")]
    CameraOutsideRoom,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite {component}")]
    NonFinite { component: String },
    #[error("checkpoint refused: {0}")]
    Checkpoint(String),
    #[error("non-finite {component} at step {step}")]
    Diverged { step: u64, component: String, report: Box<LossReport> },
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl Error {
    /// Attaches `path` to an I/O error.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
