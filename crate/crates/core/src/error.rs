use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {reason}: {content:?}")]
    MalformedLine {
        line: usize,
        content: String,
        reason: String,
    },

    /// A relation was observed with two different (head-type, tail-type) signatures.
    #[error("relation {relation:?} has conflicting signatures {first} and {second}")]
    MixedSignature {
        relation: String,
        first: String,
        second: String,
    },

    #[error("unknown {kind} {id:?}")]
    Lookup { kind: &'static str, id: String },

    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("singular system while updating {target} (condition estimate {condition:.3e})")]
    Singular { target: String, condition: f64 },

    #[error("non-finite value in {target} at sweep {sweep}")]
    NonFinite { target: String, sweep: usize },

    #[error("eigensolver did not converge: residuals {residuals:?}")]
    NoConvergence { residuals: Vec<f64> },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::NonFinite { .. } | Error::NoConvergence { .. }
        )
    }
}
