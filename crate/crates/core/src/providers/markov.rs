use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_context, LogitProvider, ProviderError};
use crate::error::{Error, Result};
use crate::types::{LogitVector, TokenId};
use crate::vocab::{VocabFile, VocabModel};

pub const MODEL_FORMAT: &str = "waterfall-markov/1";

#[derive(Clone, Debug, Default, PartialEq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

/// Fixed-order Markov model with additive smoothing:
/// `logit(t | ctx) = ln((count(ctx, t) + α) / (count(ctx) + α|V|))`.
///
/// Contexts are the last `order` tokens; shorter contexts are looked up as-is
/// and are normally unseen, which yields the uniform distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyMarkovLM {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    vocab_ref: String,
    eos: Option<TokenId>,
    counts: HashMap<Vec<TokenId>, NextCounts>,
}

/// Counts every length-`order + 1` window of every stream.
pub fn markov_train(
    corpus: &[Vec<TokenId>],
    vocab: &VocabModel,
    order: usize,
    alpha: f64,
) -> Result<ToyMarkovLM> {
    if order < 1 {
        return Err(Error::InvalidParam {
            field: "order",
            reason: "must be at least 1".into(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParam {
            field: "alpha",
            reason: "must be positive".into(),
        });
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("training corpus"));
    }
    let mut raw: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
    for stream in corpus {
        crate::types::check_ids(stream, vocab.size())?;
        for w in stream.windows(order + 1) {
            *raw.entry(w[..order].to_vec())
                .or_default()
                .entry(w[order])
                .or_default() += 1;
        }
    }
    let counts = raw
        .into_iter()
        .map(|(ctx, next)| {
            let mut next: Vec<(TokenId, u64)> = next.into_iter().collect();
            next.sort_unstable();
            let total = next.iter().map(|(_, c)| c).sum();
            (ctx, NextCounts { total, next })
        })
        .collect();
    Ok(ToyMarkovLM {
        order,
        alpha,
        vocab_size: vocab.size(),
        vocab_ref: vocab.fingerprint().to_string(),
        eos: vocab.eos_id(),
        counts,
    })
}

impl ToyMarkovLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.binary_search_by_key(&next, |(t, _)| *t).ok().map(|i| c.next[i].1))
            .unwrap_or(0)
    }

    pub fn num_contexts(&self) -> usize {
        self.counts.len()
    }

    fn context_key<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        &context[context.len().saturating_sub(self.order)..]
    }

    pub fn logits(&self, context: &[TokenId]) -> LogitVector {
        let key = self.context_key(context);
        let v = self.vocab_size as f64;
        match self.counts.get(key) {
            None => vec![-(v.ln()); self.vocab_size],
            Some(c) => {
                let denom = (c.total as f64 + self.alpha * v).ln();
                let mut out = vec![self.alpha.ln() - denom; self.vocab_size];
                for &(t, n) in &c.next {
                    out[t as usize] = (n as f64 + self.alpha).ln() - denom;
                }
                out
            }
        }
    }

    /// Sum of `ln p(t_i | t_{i-order..i})` over positions with a full context.
    pub fn log_likelihood(&self, stream: &[TokenId]) -> f64 {
        if stream.len() <= self.order {
            return 0.0;
        }
        (self.order..stream.len())
            .map(|i| self.logits(&stream[i - self.order..i])[stream[i] as usize])
            .sum()
    }

    /// `exp(-mean log-likelihood)` over positions with a full context.
    pub fn perplexity(&self, stream: &[TokenId]) -> f64 {
        let n = stream.len().saturating_sub(self.order);
        if n == 0 {
            return f64::NAN;
        }
        (-self.log_likelihood(stream) / n as f64).exp()
    }
}

impl LogitProvider for ToyMarkovLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn vocab_ref(&self) -> &str {
        &self.vocab_ref
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.vocab_size)?;
        Ok(self.logits(context))
    }
}

/// Serialized model with its vocabulary. Contexts are written in sorted
/// order so identical models serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: String,
    pub vocab_hash: String,
    pub vocab: VocabFile,
    pub order: usize,
    pub alpha: f64,
    pub contexts: Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)>,
}

impl ModelBundle {
    pub fn new(model: &ToyMarkovLM, vocab: &VocabModel) -> Result<Self> {
        if model.vocab_ref != vocab.fingerprint() {
            return Err(Error::Config("model was trained on a different vocabulary".into()));
        }
        let mut contexts: Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)> = model
            .counts
            .iter()
            .map(|(ctx, c)| (ctx.clone(), c.next.clone()))
            .collect();
        contexts.sort_unstable();
        Ok(Self {
            format: MODEL_FORMAT.to_string(),
            vocab_hash: vocab.fingerprint().to_string(),
            vocab: vocab.to_file(),
            order: model.order,
            alpha: model.alpha,
            contexts,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Rebuilds vocabulary and model, checking the embedded vocabulary hash.
    pub fn into_parts(self) -> Result<(VocabModel, ToyMarkovLM)> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model format {:?}", self.format)));
        }
        let vocab = VocabModel::from_file(self.vocab)?;
        if vocab.fingerprint() != self.vocab_hash {
            return Err(Error::Config(format!(
                "vocabulary hash mismatch: file says {}, contents hash to {}",
                self.vocab_hash,
                vocab.fingerprint()
            )));
        }
        let mut counts = HashMap::with_capacity(self.contexts.len());
        for (ctx, next) in self.contexts {
            crate::types::check_ids(&ctx, vocab.size())?;
            crate::types::check_ids(&next.iter().map(|(t, _)| *t).collect::<Vec<_>>(), vocab.size())?;
            let total = next.iter().map(|(_, c)| c).sum();
            counts.insert(ctx, NextCounts { total, next });
        }
        let model = ToyMarkovLM {
            order: self.order,
            alpha: self.alpha,
            vocab_size: vocab.size(),
            vocab_ref: vocab.fingerprint().to_string(),
            eos: vocab.eos_id(),
            counts,
        };
        Ok((vocab, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn abab() -> (VocabModel, ToyMarkovLM) {
        let vocab = VocabModel::build_word_level(["a b a b a b"], 16).unwrap();
        let ids = vocab.encode_text("a b a b a b").unwrap();
        let lm = markov_train(&[ids], &vocab, 1, 0.1).unwrap();
        (vocab, lm)
    }

    #[test]
    fn alternating_corpus_prefers_b_after_a() {
        let (vocab, lm) = abab();
        let a = vocab.id_of(b"a").unwrap();
        let b = vocab.id_of(b"b").unwrap();
        let l = lm.next_logits(&[b, a]).unwrap();
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(l[b as usize], max);
        assert_eq!(l.iter().filter(|&&x| x == max).count(), 1);
    }

    #[test]
    fn single_window_counts() {
        let vocab = VocabModel::build_word_level(["a b"], 16).unwrap();
        let ids = vocab.encode_text("a b").unwrap();
        let lm = markov_train(&[ids.clone()], &vocab, 1, 0.1).unwrap();
        assert_eq!(lm.count(&ids[..1], ids[1]), 1);
        assert_eq!(lm.num_contexts(), 1);
        assert_eq!(lm.count(&ids[1..], ids[0]), 0);
    }

    #[test]
    fn empty_corpus_and_bad_order() {
        let vocab = VocabModel::bytes();
        assert!(markov_train(&[], &vocab, 1, 0.1).is_err());
        assert!(markov_train(&[vec![]], &vocab, 1, 0.1).is_err());
        assert!(markov_train(&[vec![1, 2]], &vocab, 0, 0.1).is_err());
    }

    #[test]
    fn softmax_normalizes() {
        let (_, lm) = abab();
        for ctx in [vec![], vec![3u32], vec![4u32], vec![0u32]] {
            let s: f64 = lm.logits(&ctx).iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn depends_only_on_last_order_tokens() {
        let (_, lm) = abab();
        assert_eq!(lm.logits(&[5, 6, 3]), lm.logits(&[3]));
    }

    #[test]
    fn retraining_is_byte_identical() {
        let (vocab, lm) = abab();
        let (_, lm2) = abab();
        let a = ModelBundle::new(&lm, &vocab).unwrap().to_json();
        let b = ModelBundle::new(&lm2, &vocab).unwrap().to_json();
        assert_eq!(a, b);
        let (v2, back) = ModelBundle::from_json(a.as_bytes()).unwrap().into_parts().unwrap();
        assert_eq!(back, lm);
        assert_eq!(v2, vocab);
    }

    #[test]
    fn tampered_vocab_hash_is_detected() {
        let (vocab, lm) = abab();
        let mut bundle = ModelBundle::new(&lm, &vocab).unwrap();
        bundle.vocab_hash = "0000".into();
        assert!(bundle.into_parts().is_err());
    }

    #[test]
    fn generated_text_beats_shuffled_perplexity() {
        let corpus = crate::corpus::synthetic_corpus(7, 20_000);
        let vocab = VocabModel::build_word_level(corpus.iter().map(String::as_str), 1024).unwrap();
        let streams: Vec<Vec<TokenId>> =
            corpus.iter().map(|d| vocab.encode_text(d).unwrap()).collect();
        let lm = markov_train(&streams, &vocab, 2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut ll_sample, mut ll_shuffled) = (0.0, 0.0);
        for i in 0..50 {
            let prompt = &streams[i][..2];
            let sample = crate::watermark::generate_plain(
                &NoEos::new(&lm),
                prompt,
                &crate::params::SamplingConfig::default(),
                200,
                i as u64,
            )
            .unwrap();
            let mut shuffled = sample.clone();
            shuffled.shuffle(&mut rng);
            ll_sample += lm.log_likelihood(&sample);
            ll_shuffled += lm.log_likelihood(&shuffled);
        }
        assert!(ll_sample > ll_shuffled, "{ll_sample} vs {ll_shuffled}");
    }

    use super::super::NoEos;
}
