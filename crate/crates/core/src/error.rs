use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected \"unanimous\" or \"k-of-n:K\")")]
    Unknown(String),
    #[error("k-of-n quorum k={k} is invalid for {n} validators (need n/2 < k <= n)")]
    InvalidQuorum { k: usize, n: usize },
    #[error("no votes to decide on")]
    NoVotes,
    #[error("claim match required but question has no claimed answer")]
    MissingClaim,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("at least two validators required, found {0}")]
    TooFewValidators(usize),
    #[error("invalid validator profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("failed to load fixture {path}: {reason}")]
    Fixture { path: PathBuf, reason: String },
    #[error("failed to read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("question {id:?}: {source}")]
    Question { id: String, source: PolicyError },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("{path}:{line}: invalid field `{field}`: {reason}")]
    Invalid {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
    #[error("{path}: truncated final line at byte offset {offset}")]
    Truncated { path: PathBuf, offset: u64 },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: not a run directory ({reason})")]
    Layout { path: PathBuf, reason: String },
    #[error("record for question {0:?} already exists in this run")]
    DuplicateId(String),
    #[error("duplicate question id {id:?} in dataset")]
    DuplicateQuestion { id: String },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("duplicate question id {0:?} in dataset")]
    DuplicateQuestion(String),
}
