//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("cost became non-finite (rollout blow-up)")]
    NonFiniteCost,

    #[error("all local solves diverged")]
    AllSolvesDiverged,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch: file is corrupted or truncated")]
    ChecksumMismatch,

    #[error("digest mismatch: {0}")]
    DigestMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
