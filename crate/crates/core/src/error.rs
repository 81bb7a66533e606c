//! Shared error type.

use thiserror::Error;

/// Errors produced by the core pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A log or serialized artifact failed to parse. Carries the
    /// 1-based line number of the offending line.
    #[error("parse error at line {line}: {msg}")]
    Parse {
        /// 1-based line number.
        line: usize,
        /// What went wrong on that line.
        msg: String,
    },

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A precondition on arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Sample sizes too small or mismatched for a statistic.
    #[error("sample size unusable: reference {n}, candidate {m}")]
    SampleSize {
        /// Reference sample rows.
        n: usize,
        /// Candidate sample rows.
        m: usize,
    },

    /// Stratified sharding cannot satisfy the per-class requirement.
    #[error("cannot stratify: class {class} has {rows} rows for {shards} shards")]
    Stratification {
        /// Offending class name.
        class: String,
        /// Rows available for that class.
        rows: usize,
        /// Requested shard count.
        shards: usize,
    },

    /// Models or datasets disagree on the class list.
    #[error("class list mismatch: {0}")]
    ClassMismatch(String),

    /// Hash chain verification failed.
    #[error("hash chain broken at block {index}")]
    ChainBroken {
        /// Index of the earliest block whose record no longer matches
        /// the digest its successor (or the chain head) committed to.
        index: usize,
    },

    /// Stored bytes no longer match their content digest.
    #[error("content tampered: {0}")]
    Tamper(String),

    /// Requested digest is not in the store.
    #[error("model not found: {0}")]
    NotFound(String),

    /// A batch whose verdict accepted the null cannot be captured.
    #[error("capture refused: verdict did not reject the null hypothesis")]
    CaptureRefused,

    /// Augmentation selection matched no captured rows.
    #[error("augmentation selected no rows: {0}")]
    EmptyAugmentation(String),

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
