//! Crate-wide error type.
//!
//! Variants are grouped by who is at fault: `Schema`/`Parse`/`Data` blame the
//! input files, `Config` blames the caller's parameters, `Domain` blames a
//! contract violation between pipeline stages, and `Numeric` reports a
//! linear-algebra failure together with a rough condition estimate when one
//! is available.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file's column layout does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Caller-supplied parameters are inconsistent or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// Inputs violate a precondition between pipeline stages.
    #[error("domain error: {0}")]
    Domain(String),

    /// The data itself is unusable (missing classes, empty splits, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A numeric routine failed; `condition` is a pivot-ratio estimate of the
    /// offending matrix's conditioning when the solver can provide one.
    #[error("numeric error: {msg}{}", condition.map(|c| format!(" (condition estimate {c:.3e})")).unwrap_or_default())]
    Numeric { msg: String, condition: Option<f64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a numeric error without a condition estimate.
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric { msg: msg.into(), condition: None }
    }
}
