use super::{check_context, Capabilities, LogitProvider, ProviderError};
use crate::types::{LogitVector, TokenId};

/// All logits zero.
#[derive(Clone, Debug)]
pub struct UniformProvider {
    size: usize,
    vocab_ref: String,
}

impl UniformProvider {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            vocab_ref: format!("synthetic-{size}"),
        }
    }
}

impl LogitProvider for UniformProvider {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn vocab_ref(&self) -> &str {
        &self.vocab_ref
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.size)?;
        Ok(vec![0.0; self.size])
    }
}

/// Logit 10 on one token, 0 elsewhere.
#[derive(Clone, Debug)]
pub struct PeakedProvider {
    size: usize,
    target: TokenId,
    vocab_ref: String,
}

impl PeakedProvider {
    pub const PEAK: f64 = 10.0;

    pub fn new(size: usize, target: TokenId) -> Self {
        assert!((target as usize) < size);
        Self {
            size,
            target,
            vocab_ref: format!("synthetic-{size}"),
        }
    }
}

impl LogitProvider for PeakedProvider {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn vocab_ref(&self) -> &str {
        &self.vocab_ref
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.size)?;
        let mut l = vec![0.0; self.size];
        l[self.target as usize] = Self::PEAK;
        Ok(l)
    }
}

/// Peaks at `script[i]` for the i-th generated token (the context beyond
/// `prompt_len`), then at `eos` once the script is exhausted.
#[derive(Clone, Debug)]
pub struct ForcedSequenceProvider {
    size: usize,
    prompt_len: usize,
    script: Vec<TokenId>,
    eos: TokenId,
    peak: f64,
    vocab_ref: String,
}

impl ForcedSequenceProvider {
    pub fn new(size: usize, prompt_len: usize, script: Vec<TokenId>, eos: TokenId, peak: f64) -> Self {
        assert!(script.iter().chain([&eos]).all(|&t| (t as usize) < size));
        Self {
            size,
            prompt_len,
            script,
            eos,
            peak,
            vocab_ref: format!("synthetic-{size}"),
        }
    }
}

impl LogitProvider for ForcedSequenceProvider {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn vocab_ref(&self) -> &str {
        &self.vocab_ref
    }

    fn eos_id(&self) -> Option<TokenId> {
        Some(self.eos)
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.size)?;
        let pos = context.len().saturating_sub(self.prompt_len);
        let target = self.script.get(pos).copied().unwrap_or(self.eos);
        let mut l = vec![0.0; self.size];
        l[target as usize] = self.peak;
        Ok(l)
    }
}

/// Hides the inner provider's end-of-sequence token so generation always
/// runs to `max_tokens`. The token's logit is pushed far below the rest.
#[derive(Clone, Debug)]
pub struct NoEos<P> {
    inner: P,
}

impl<P> NoEos<P> {
    const SUPPRESSED: f64 = -1.0e30;

    pub fn new(inner: P) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: LogitProvider> LogitProvider for NoEos<P> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn vocab_ref(&self) -> &str {
        self.inner.vocab_ref()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        let mut l = self.inner.next_logits(context)?;
        if let Some(eos) = self.inner.eos_id() {
            l[eos as usize] = Self::SUPPRESSED;
        }
        Ok(l)
    }
}
