//! Next-token logit sources.
//!
//! Everything that can stand in for the paraphrasing language model
//! implements [`LogitProvider`]: a toy Markov model trained on a corpus, a
//! cache-augmented variant of it that reuses bigrams from its context,
//! synthetic providers with closed-form outputs, and an HTTP client for
//! external inference servers.

mod markov;
mod paraphrase;
mod remote;
mod synthetic;

use thiserror::Error;

pub use markov::{markov_train, ModelBundle, ToyMarkovLM, MODEL_FORMAT};
pub use paraphrase::CacheParaphraser;
pub use remote::{LogitsRequest, LogitsResponse, RemoteProvider};
pub use synthetic::{ForcedSequenceProvider, NoEos, PeakedProvider, UniformProvider};

use crate::types::{LogitVector, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub deterministic: bool,
    pub remote: bool,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ProviderError {
    #[error("request to {endpoint} failed after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
        retryable: bool,
    },
    #[error("provider returned {actual} logits, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("provider returned a non-finite logit at index {index}")]
    NonFinite { index: usize },
    #[error("malformed provider reply: {0}")]
    Malformed(String),
    #[error("context token {id} out of range for vocabulary of size {vocab_size}")]
    BadContext { id: TokenId, vocab_size: usize },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport { retryable: true, .. })
    }
}

pub trait LogitProvider: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Identifier of the vocabulary the logits index.
    fn vocab_ref(&self) -> &str;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            remote: false,
        }
    }

    /// Token that ends generation, if the provider has one.
    fn eos_id(&self) -> Option<TokenId> {
        None
    }

    /// Finite logits of length [`vocab_size`](Self::vocab_size).
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError>;
}

impl<P: LogitProvider + ?Sized> LogitProvider for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn vocab_ref(&self) -> &str {
        (**self).vocab_ref()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn eos_id(&self) -> Option<TokenId> {
        (**self).eos_id()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        (**self).next_logits(context)
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for std::sync::Arc<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn vocab_ref(&self) -> &str {
        (**self).vocab_ref()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn eos_id(&self) -> Option<TokenId> {
        (**self).eos_id()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        (**self).next_logits(context)
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for Box<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn vocab_ref(&self) -> &str {
        (**self).vocab_ref()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn eos_id(&self) -> Option<TokenId> {
        (**self).eos_id()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        (**self).next_logits(context)
    }
}

/// Checks the provider contract on a reply: right length, all finite.
pub fn validate_logits(logits: &[f64], expected: usize) -> Result<(), ProviderError> {
    if logits.len() != expected {
        return Err(ProviderError::LengthMismatch {
            expected,
            actual: logits.len(),
        });
    }
    match logits.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ProviderError::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<(), ProviderError> {
    match context.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(ProviderError::BadContext { id, vocab_size }),
        None => Ok(()),
    }
}
