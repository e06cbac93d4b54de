use std::io;
use std::path::PathBuf;

use crate::ingest::IngestError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read config {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: io::Error },
    #[error("cannot parse config {}: {source}", path.display())]
    ConfigParse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Core(#[from] bvmi_core::Error),
    #[error("{aborted} of {total} repetitions aborted (first: repetition {first_index}: {first})")]
    TooManyAborted {
        aborted: usize,
        total: usize,
        first_index: usize,
        first: bvmi_core::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

impl Error {
    /// Process exit status: 2 for configuration and input problems, 3 for
    /// numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::ConfigRead { .. } | Error::ConfigParse { .. } | Error::Config(_) | Error::Ingest(_) => EXIT_CONFIG,
            Error::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            Error::Core(_) => EXIT_CONFIG,
            Error::TooManyAborted { .. } => EXIT_NUMERICAL,
            Error::Output { .. } | Error::ThreadPool(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
