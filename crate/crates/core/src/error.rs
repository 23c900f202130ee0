//! Error types, one per stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} component {index} is not finite")]
    NonFinite { what: &'static str, index: usize },
    #[error("embedding has zero norm, cosine similarity would be undefined")]
    ZeroNormEmbedding,
    #[error("answer has {0} tokens; at least 2 are needed to form a non-empty context")]
    AnswerTooShort(usize),
    #[error("chunk size must be at least 1")]
    InvalidChunkSize,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{0} must be non-empty")]
    MissingId(&'static str),
    #[error("corpus line {line}: {message}")]
    CorpusParse { line: usize, message: String },
    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<BuildError>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: header says {expected:#010x}, records hash to {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("invalid record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: BuildError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("zero-norm vector, cosine similarity undefined")]
    ZeroNorm,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("grounding space is empty")]
    EmptySpace,
    #[error("top-N must be at least 1")]
    InvalidTopN,
    #[error("similarity list is empty")]
    EmptySimilarities,
    #[error("non-finite similarity at position {0}")]
    NonFinite(usize),
    #[error("selected set is empty")]
    EmptySelection,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure or deadline hit. Safe to retry.
    #[error("retryable backend failure: {0}")]
    Retryable(String),
    /// Contract or schema violation. Retrying will not help.
    #[error("fatal backend failure: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Retryable(_))
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{what} mismatch: space was built with {space:?}, backend reports {backend:?}")]
    IdMismatch {
        what: &'static str,
        space: String,
        backend: String,
    },
    #[error("backend reports {what} {backend}, space has {space}")]
    ShapeMismatch {
        what: &'static str,
        space: usize,
        backend: usize,
    },
    #[error("prompt tokenizes to nothing")]
    EmptyPrompt,
    #[error("logit vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<DecodeError>,
        /// Records of the steps that completed before the failure.
        partial: Box<crate::decoder::DecodeTrace>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}
