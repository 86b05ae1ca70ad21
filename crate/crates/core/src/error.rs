use crate::types::TokenId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {0} does not fit the 32-bit key encoding")]
    EncodingRange(u64),

    #[error("token id {id} is out of range for a vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("perturbation key {k_p} outside valid range [{lo}, {hi}]")]
    KeyOutOfRange { k_p: u64, lo: u64, hi: u64 },

    #[error("unsupported vocabulary size {vocab_size}: {reason}")]
    UnsupportedVocabSize { vocab_size: usize, reason: &'static str },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("stream too short: need at least {needed} tokens, got {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("protocol mismatch on `{field}`: manifest has {manifest}, verifier has {local}")]
    Protocol {
        field: &'static str,
        manifest: String,
        local: String,
    },

    #[error("provenance mismatch between count vectors: {0}")]
    Provenance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tokenization failed: {0}")]
    Tokenize(String),

    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),

    #[error(transparent)]
    Provider(#[from] crate::providers::ProviderError),

    #[error("generation stopped after {} tokens: {source}", .generated.len())]
    PartialOutput {
        generated: Vec<TokenId>,
        #[source]
        source: crate::providers::ProviderError,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
