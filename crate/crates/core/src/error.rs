use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}, {2}) lies outside the unit cube")]
    Domain(f64, f64, f64),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("stale cache: {0}")]
    StaleCache(&'static str),

    #[error("non-finite value in {what} at iteration {iteration}")]
    Diverged { what: String, iteration: u32 },

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("scene load error: {0}")]
    Load(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("trace sink is closed")]
    SinkClosed,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
