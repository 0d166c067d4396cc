use std::io;

use thiserror::Error;

/// Errors produced by the matching pipeline.
///
/// The variants map onto the error classes the CLI turns into exit codes:
/// I/O failures are distinct from malformed or inconsistent data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    /// Bytes that do not parse as the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed data that violates a shape, range or consistency rule.
    #[error("validation error: {0}")]
    Validation(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The synthetic scene generator could not satisfy its configuration.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures of the environment rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::Validation(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
