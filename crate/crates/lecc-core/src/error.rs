//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. Variants carry
//! enough context to print a single actionable line; the CLI maps each
//! variant to a stable machine-readable code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or tensor shape mismatch. Names both shapes involved.
    #[error("dimension mismatch: {op} got {lhs} and {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// An index (class id, token id, row) outside its valid range.
    #[error("{what} {got} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    /// Backward called without a matching forward, or other misuse of
    /// stateful call order.
    #[error("state error: {0}")]
    State(&'static str),

    /// Invalid model, adapter, or training configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Input CSV is missing required columns or has malformed rows.
    #[error("schema error: {0}")]
    Schema(String),

    /// Label or class-set problem (unknown class, duplicate id, empty set).
    #[error("label error: {0}")]
    Label(String),

    /// Dataset content problem (empty split, insufficient samples).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed serialized artifact (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Checksum mismatch on a serialized artifact or wire frame.
    #[error("checksum mismatch: expected {expected:#010x}, got {actual:#010x}")]
    Checksum { expected: u32, actual: u32 },

    /// Artifact produced against a different backbone than the one loaded.
    #[error("incompatible backbone: fingerprint {theirs:#010x} != {ours:#010x}")]
    Incompatible { theirs: u32, ours: u32 },

    /// Coordinator rejected a submission; carries the wire reason string.
    #[error("rejected: {0}")]
    Rejected(String),

    /// Wire protocol violation (bad magic, unknown message type, short frame).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable code for CLI output, one per failure family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension-error",
            Error::OutOfRange { .. } => "range-error",
            Error::State(_) => "state-error",
            Error::Config(_) => "config-error",
            Error::Schema(_) => "schema-error",
            Error::Label(_) => "label-error",
            Error::Data(_) => "data-error",
            Error::Format(_) => "format-error",
            Error::Checksum { .. } => "bad-checksum",
            Error::Incompatible { .. } => "incompatible-backbone",
            Error::Rejected(_) => "rejected",
            Error::Protocol(_) => "protocol-error",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
        }
    }
}
