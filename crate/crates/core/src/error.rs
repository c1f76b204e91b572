use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    /// Bad command-line usage or an out-of-range option value.
    #[error("usage: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace error at job {job_id}: {msg}")]
    Trace { job_id: u64, msg: String },

    #[error("job {job_id} can never run: {msg}")]
    Job { job_id: u64, msg: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("policy contract violated: {0}")]
    PolicyContract(String),

    #[error("training diverged (loss {loss}) with {hyperparameters}")]
    Divergence { loss: f64, hyperparameters: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Usage(_) => 2,
            _ => 1,
        }
    }
}
