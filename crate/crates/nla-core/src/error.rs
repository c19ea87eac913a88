//! Crate-wide error type and the exit-code categories the CLI maps it to.

use std::path::PathBuf;
use thiserror::Error;

/// Broad failure category, used by the CLI to pick a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, unreadable config, invalid parameter combinations.
    Config,
    /// Malformed or contract-violating input data (bank, corpus, schema).
    Validation,
    /// Network, backend protocol, or storage failures.
    Transport,
    /// Statistics undefined on the given data (all-tied ranks, zero variance).
    DegenerateStats,
}

/// Unified error for every pipeline stage.
#[derive(Debug, Error)]
pub enum NlaError {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),
}

impl NlaError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            NlaError::Config(_) => ErrorKind::Config,
            NlaError::Parse { .. } | NlaError::Validation(_) => ErrorKind::Validation,
            NlaError::Backend(_) | NlaError::Transport(_) | NlaError::Io { .. } => {
                ErrorKind::Transport
            }
            NlaError::DegenerateStats(_) => ErrorKind::DegenerateStats,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NlaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        NlaError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NlaError>;
