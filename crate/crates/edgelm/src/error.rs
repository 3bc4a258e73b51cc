//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad magic, unknown version, or otherwise malformed header/content.
    #[error("format error: {0}")]
    Format(String),
    /// Input ended before the declared payload was complete.
    #[error("truncated input: {0}")]
    Truncation(String),
    /// Dimension or group-size mismatch.
    #[error("shape error: {0}")]
    Shape(String),
    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Text that cannot be tokenized with the given vocabulary.
    #[error("encoding error: {0}")]
    Encoding(String),
    /// Scalar parameter outside its documented range.
    #[error("range error: {0}")]
    Range(String),
    /// Out-of-bounds element access.
    #[error("index error: {0}")]
    Index(String),
    /// Sequence position or prompt length exceeds the model's capacity.
    #[error("capacity error: {0}")]
    Capacity(String),
    /// I/O failure while streaming layer weights mid-pass.
    #[error("stream error at layer {layer}: {source}")]
    Stream {
        layer: usize,
        #[source]
        source: std::io::Error,
    },
    /// Value outside its enumerated domain (e.g. a decision code).
    #[error("domain error: {0}")]
    Domain(String),
    /// Transport or HTTP failure talking to a backend; retryable.
    #[error("backend error: {0}")]
    Backend(String),
    /// Fatal backend misconfiguration (missing/rejected credentials).
    #[error("config error: {0}")]
    Config(String),
    /// A report was requested over an empty selection.
    #[error("empty report: {0}")]
    EmptyReport(String),
    /// A log line that does not parse as an evaluation record.
    #[error("malformed record at line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when a retry against the same backend is worth attempting.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend(_))
    }
}
