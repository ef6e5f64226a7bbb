use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while configuring or driving a simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("malformed binary trace: {0}")]
    TraceBinary(String),

    #[error("trace {path}: {source}")]
    TraceFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("out of physical memory: {frames} frames of {page_size} bytes exhausted")]
    OutOfMemory { frames: u64, page_size: u64 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    /// True for errors caused by a bad trace file rather than a bad config.
    pub fn is_trace_error(&self) -> bool {
        matches!(self, Error::TraceParse { .. } | Error::TraceBinary(_) | Error::TraceFile { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
