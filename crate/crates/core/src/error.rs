use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("enumeration too large: {what} needs {work:.3e} evaluations (limit {limit:.0e})")]
    Size { what: String, work: f64, limit: f64 },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("numerical integration failed: {what} (achieved error {achieved:.3e}, requested {requested:.3e})")]
    Numeric {
        what: String,
        achieved: f64,
        requested: f64,
    },

    #[error("invalid resampling plan: {0}")]
    InvalidPlan(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Enumeration budget shared by all brute-force paths.
pub const ENUMERATION_LIMIT: f64 = 1e8;

pub(crate) fn check_work(what: impl Into<String>, work: f64) -> Result<()> {
    if work > ENUMERATION_LIMIT {
        return Err(Error::Size {
            what: what.into(),
            work,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}
