use std::collections::HashMap;
use std::sync::Arc;

use super::{check_context, LogitProvider, ProviderError, ToyMarkovLM};
use crate::types::{LogitVector, TokenId};

/// Toy paraphraser: a Markov model interpolated with a bigram cache built
/// from the context itself,
/// `p(t) = (1 - λ) p_lm(t | ctx) + λ p_cache(t | last token)`.
///
/// With the source text in the prompt the cache pulls generation back onto
/// the source's bigrams, so regenerating a text largely reuses its n-grams.
/// When the last token has no successor in the context, `p_lm` is used alone.
/// `λ` lies in `[0, 1)` so every logit stays finite.
#[derive(Clone, Debug)]
pub struct CacheParaphraser {
    lm: Arc<ToyMarkovLM>,
    cache_weight: f64,
}

impl CacheParaphraser {
    pub fn new(lm: Arc<ToyMarkovLM>, cache_weight: f64) -> Self {
        assert!((0.0..1.0).contains(&cache_weight), "cache weight must lie in [0, 1)");
        Self { lm, cache_weight }
    }

    pub fn lm(&self) -> &ToyMarkovLM {
        &self.lm
    }
}

impl LogitProvider for CacheParaphraser {
    fn vocab_size(&self) -> usize {
        self.lm.vocab_size()
    }

    fn vocab_ref(&self) -> &str {
        self.lm.vocab_ref()
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.lm.eos_id()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.vocab_size())?;
        let base = self.lm.logits(context);
        let Some(&last) = context.last() else {
            return Ok(base);
        };
        let mut successors: HashMap<TokenId, u32> = HashMap::new();
        for w in context.windows(2) {
            if w[0] == last {
                *successors.entry(w[1]).or_default() += 1;
            }
        }
        let total: u32 = successors.values().sum();
        if total == 0 || self.cache_weight == 0.0 {
            return Ok(base);
        }
        let lam = self.cache_weight;
        let keep = (1.0 - lam).ln();
        let mut out: Vec<f64> = base.iter().map(|l| l + keep).collect();
        for (&t, &c) in &successors {
            let p = (1.0 - lam) * base[t as usize].exp() + lam * c as f64 / total as f64;
            out[t as usize] = p.ln();
        }
        Ok(out)
    }
}
