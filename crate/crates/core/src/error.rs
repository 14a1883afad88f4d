// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid transition kernel: {0}")]
    InvalidKernel(String),

    #[error("chain has no unique stationary distribution: {0}")]
    NoUniqueStationary(String),

    #[error("chain is not uniformly ergodic: second-largest eigenvalue modulus {0} >= 1")]
    NotErgodic(f64),

    #[error("state spaces do not match: {0}")]
    StateSpaceMismatch(String),

    #[error("{0} must be nonempty")]
    Empty(&'static str),

    #[error("sample path of length {0} is too short, need at least 2 samples")]
    PathTooShort(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("detector already alarmed at sample {0}; no further samples accepted")]
    AlreadyAlarmed(u64),

    #[error("{stream} stream exhausted after {consumed} samples (needed {needed})")]
    StreamExhausted {
        stream: &'static str,
        consumed: u64,
        needed: u64,
    },

    #[error("infeasible: {reason} (hint: {remedy})")]
    Infeasible { reason: String, remedy: String },

    #[error("no completed trials")]
    NoTrials,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
