use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid quaternion: {0}")]
    InvalidQuat(String),

    #[error("composite inertia has zero total mass")]
    ZeroMass,

    #[error("infeasible leg configuration: {0}")]
    Infeasible(String),

    #[error("singular leg configuration (condition ratio {0:.3e})")]
    Singular(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("environment already done; call reset first")]
    EnvDone,

    #[error("could not spawn a collision-free pose after {0} attempts")]
    SpawnFailed(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
