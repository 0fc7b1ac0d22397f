use std::io;
use std::path::PathBuf;

use slotune_core::stats::ReportError;
use slotune_core::study::ReplayError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: cannot resume: {source}", path.display())]
    Replay {
        path: PathBuf,
        #[source]
        source: ReplayError,
    },
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("invalid study settings: {0}")]
    InvalidSettings(String),
    #[error("no studies found in {}", .0.display())]
    NoStudies(PathBuf),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("trial {index} is out of range: {} holds {len} trials, numbered from 1", path.display())]
    IndexOutOfRange { path: PathBuf, index: u32, len: usize },
    #[error("{failed} of {total} studies failed")]
    StudiesFailed { failed: usize, total: usize },
    #[error("{failed} calibration targets missed")]
    CalibrationFailed { failed: usize },
}

impl Error {
    /// Process exit status: 2 for bad input data, 3 for failed studies.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Write { .. } | Error::Replay { .. } | Error::StudiesFailed { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
