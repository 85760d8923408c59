use std::io;

use thiserror::Error;

/// Errors raised across the toolchain.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or layer settings that do not compose.
    #[error("configuration error: {0}")]
    Config(String),
    /// Inputs outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A value does not fit the fixed-point frame.
    #[error("range error: {0}")]
    Range(String),
    /// A loss or gradient became non-finite.
    #[error("numeric error on sample {sample}: {message}")]
    Numeric { sample: String, message: String },
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Binary container (SACW, SAQM, DVSF) is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// Streaming element order or count violated.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Raised by the integer engine in diagnostic mode.
    #[error("saturation in layer {layer}: {message}")]
    Saturation { layer: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
