use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: {left} vs {right}")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("invalid template: {}", join_violations(.0))]
    InvalidTemplate(Vec<crate::template::Violation>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no feasible maximal assignment ({rows}x{cols} matrix, {matched} pairs reachable)")]
    Infeasible {
        rows: usize,
        cols: usize,
        matched: usize,
    },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
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

fn join_violations(v: &[crate::template::Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Failure while decoding a serialized template. `offset` is the byte
/// position at which decoding stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    BadMagic,
    UnsupportedVersion(u8),
    Truncated { needed: usize },
    InvalidUtf8,
    TrailingBytes(usize),
    Json(String),
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeErrorKind::BadMagic => write!(f, "bad magic (expected \"FPT1\")"),
            DecodeErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            DecodeErrorKind::Truncated { needed } => {
                write!(f, "truncated payload ({needed} more bytes needed)")
            }
            DecodeErrorKind::InvalidUtf8 => write!(f, "source id is not valid utf-8"),
            DecodeErrorKind::TrailingBytes(n) => write!(f, "{n} trailing bytes"),
            DecodeErrorKind::Json(msg) => write!(f, "json: {msg}"),
        }
    }
}
