use std::io;

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("transform is singular: {0}")]
    Singular(String),

    #[error("sequence too short: {len} frames, filter needs at least {needed}")]
    SequenceLength { len: usize, needed: usize },

    #[error("empty mask: no pixels selected for evaluation")]
    EmptyMask,

    #[error("gradient tape does not match this network: {0}")]
    Tape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
