use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("temperature lambda = {lambda} outside the feasible range [0, {bound})")]
    Infeasible { lambda: f64, bound: f64 },

    #[error("no feasible cell in the temperature grid")]
    NoFeasibleCell,

    #[error("{what}: bad magic {found:?}")]
    BadMagic { what: &'static str, found: [u8; 4] },

    #[error("{what}: unsupported version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },

    #[error("{what}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
    },

    #[error("{what}: {extra} trailing bytes after payload")]
    TrailingBytes { what: &'static str, extra: usize },

    #[error("mask byte at index {index} is {value}, expected 0 or 1")]
    InvalidMaskByte { index: usize, value: u8 },

    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },

    #[error("config key `{key}`: {reason}")]
    ConfigValue { key: String, reason: String },

    #[error("unknown config keys: {0}")]
    UnknownKeys(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
