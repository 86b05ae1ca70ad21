//! Evaluation harness: AUROC, experiment configuration and the desk-scale
//! sweeps over a toy language model.
//!
//! Positives are watermarked generations; negatives ("null") are
//! unwatermarked generations from the same provider and prompts, scored
//! with the same id and key. Attack rates are fractions of tokens.

mod config;
mod plot;
mod sweeps;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

pub use config::{AttackSpec, ExperimentConfig, ExperimentKind, ProviderSpec};
pub use plot::{emit_distribution_plotdata, frequency_amplitudes, plotdata_csv, PlotRow};
pub use sweeps::{
    run_experiment, run_extraction_sweep, run_robustness_sweep, run_scalability_check,
    run_verifiability_sweep, AurocCell, ExtractionCell, ExtractionReport, ReportHeader,
    ScalabilityReport, SweepReport,
};

use crate::corpus::synthetic_corpus;
use crate::error::{Error, Result};
use crate::providers::{markov_train, ModelBundle, ToyMarkovLM};
use crate::types::TokenId;
use crate::vocab::VocabModel;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks of the pooled scores.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("score set for AUROC"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::InvalidParam {
            field: "scores",
            reason: "NaN score".into(),
        });
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Ranks are 1-based; a tie group spanning ranks a..=b gets (a + b) / 2.
    // Doubled to stay in integers.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid_x2 = (i + 1 + j + 1) as u128;
        rank_sum_x2 += mid_x2 * all[i..=j].iter().filter(|x| x.1).count() as u128;
        i = j + 1;
    }
    let p = pos.len() as u128;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * neg.len() as u128) as f64)
}

/// O(P N) pair counting; the reference for [`auroc`].
pub fn auroc_brute_force(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("score set for AUROC"));
    }
    let mut wins_x2: u128 = 0;
    for &p in pos {
        for &n in neg {
            wins_x2 += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Ok(wins_x2 as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Sub-seed for one named purpose and index under a master seed.
pub fn sub_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_be_bytes());
    h.update((tag.len() as u64).to_be_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_be_bytes());
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Runs `f(0..count)` on up to `jobs` threads, returning results in index
/// order.
pub fn par_map<T: Send>(count: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, count.max(1));
    if jobs == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|x| x.expect("every index computed"))
        .collect()
}

/// Default worker count: the machine's available parallelism.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A toy language model with its vocabulary and the documents it was
/// trained on, which also supply prompts.
#[derive(Clone, Debug)]
pub struct Desk {
    pub vocab: VocabModel,
    pub lm: Arc<ToyMarkovLM>,
    /// Tokenized documents without BOS/EOS markers.
    pub docs: Vec<Vec<TokenId>>,
}

/// Documents wrapped as `[BOS] ++ doc ++ [EOS]` for training.
pub fn training_streams(docs: &[Vec<TokenId>], vocab: &VocabModel) -> Vec<Vec<TokenId>> {
    docs.iter()
        .map(|d| {
            vocab
                .bos_id()
                .into_iter()
                .chain(d.iter().copied())
                .chain(vocab.eos_id())
                .collect()
        })
        .collect()
}

impl Desk {
    /// Trains an order-`order` model on the synthetic corpus with a
    /// frequency-capped word vocabulary.
    pub fn toy(vocab_size: usize, order: usize, alpha: f64, corpus_tokens: usize, corpus_seed: u64) -> Result<Self> {
        let texts = synthetic_corpus(corpus_seed, corpus_tokens);
        let vocab = VocabModel::build_word_level(texts.iter().map(String::as_str), vocab_size)?;
        let docs = texts
            .iter()
            .map(|t| vocab.encode_text(t))
            .collect::<Result<Vec<_>>>()?;
        let lm = markov_train(&training_streams(&docs, &vocab), &vocab, order, alpha)?;
        Ok(Self {
            vocab,
            lm: Arc::new(lm),
            docs,
        })
    }

    pub fn from_spec(spec: &ProviderSpec) -> Result<Self> {
        match spec {
            ProviderSpec::Toy {
                vocab_size,
                order,
                alpha,
                corpus_tokens,
                corpus_seed,
            } => Self::toy(*vocab_size, *order, *alpha, *corpus_tokens, *corpus_seed),
            ProviderSpec::Model {
                path,
                corpus_tokens,
                corpus_seed,
            } => {
                let bytes = std::fs::read(path)?;
                let (vocab, lm) = ModelBundle::from_json(&bytes)?.into_parts()?;
                let docs = synthetic_corpus(*corpus_seed, *corpus_tokens)
                    .iter()
                    .map(|t| vocab.encode_text(t))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self {
                    vocab,
                    lm: Arc::new(lm),
                    docs,
                })
            }
        }
    }

    /// `[BOS] ++` the first `len` tokens of a document chosen by `seed`.
    pub fn prompt(&self, seed: u64, len: usize) -> Vec<TokenId> {
        let doc = &self.docs[(seed % self.docs.len() as u64) as usize];
        self.vocab
            .bos_id()
            .into_iter()
            .chain(doc.iter().take(len).copied())
            .collect()
    }
}
