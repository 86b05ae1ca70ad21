//! Verification: tally tokens in permuted space and project the average
//! count vector onto the basis vector.
//!
//! The first `n - 1` tokens have no in-stream prefix and are skipped. The
//! verifier never sees the prompt, so it cannot reproduce the context
//! padding used during generation. Repeated n-grams are counted every time.

mod scan;

use serde::Serialize;

pub use scan::{scan_corpus, ScanEntry, ScanSummary};

use crate::error::{Error, Result};
use crate::keying::{derive_perm_key, Permuter};
use crate::manifest::WatermarkManifest;
use crate::perturb::PerturbationBasis;
use crate::types::{check_ids, Backend, Family, TokenId, WatermarkId};

/// Where a count vector came from; only vectors with equal provenance can
/// be combined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountProvenance {
    pub mu: WatermarkId,
    pub n: usize,
    pub backend: Backend,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountVector {
    pub counts: Vec<u64>,
    pub n_counted: u64,
    pub provenance: CountProvenance,
}

impl CountVector {
    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    /// `counts / n_counted`.
    pub fn average(&self) -> Vec<f64> {
        let n = self.n_counted as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Counts every token at position `j >= n - 1` in the slot chosen by the
/// key of its `n - 1` predecessors.
pub fn count_tokens(tokens: &[TokenId], mu: &WatermarkId, n: usize, permuter: &Permuter) -> Result<CountVector> {
    if n < 1 {
        return Err(Error::InvalidParam {
            field: "n",
            reason: "must be at least 1".into(),
        });
    }
    if tokens.len() < n {
        return Err(Error::TooShort {
            needed: n,
            actual: tokens.len(),
        });
    }
    check_ids(tokens, permuter.size())?;
    let mut counts = vec![0u64; permuter.size()];
    for j in (n - 1)..tokens.len() {
        let key = derive_perm_key(mu, &tokens[j + 1 - n..j]);
        counts[permuter.permuted_index(key, tokens[j]) as usize] += 1;
    }
    Ok(CountVector {
        counts,
        n_counted: (tokens.len() + 1 - n) as u64,
        provenance: CountProvenance {
            mu: mu.clone(),
            n,
            backend: permuter.backend(),
        },
    })
}

/// `q = sum_v (counts[v] / n_counted) * phi[v] / ||phi||`.
pub fn score(counts: &CountVector, k_p: u64, basis: &PerturbationBasis) -> Result<f64> {
    if counts.n_counted == 0 {
        return Err(Error::EmptyInput("count vector"));
    }
    if counts.vocab_size() != basis.vocab_size() {
        return Err(Error::LengthMismatch {
            expected: basis.vocab_size(),
            actual: counts.vocab_size(),
        });
    }
    let phi = basis.vector(k_p)?;
    let n = counts.n_counted as f64;
    Ok(counts
        .counts
        .iter()
        .zip(&phi.values)
        .filter(|(&c, _)| c != 0)
        .map(|(&c, &f)| (c as f64 / n) * f / phi.norm)
        .sum())
}

/// Empirical `1 - target_fpr` quantile of the null scores: the order
/// statistic at rank `ceil(m p)`, or the midpoint of ranks `m p` and
/// `m p + 1` when `m p` is an integer.
pub fn calibrate_threshold(null_scores: &[f64], target_fpr: f64) -> Result<f64> {
    const MIN_SAMPLES: usize = 100;
    if null_scores.len() < MIN_SAMPLES {
        return Err(Error::TooShort {
            needed: MIN_SAMPLES,
            actual: null_scores.len(),
        });
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::InvalidParam {
            field: "target_fpr",
            reason: "must lie in (0, 1)".into(),
        });
    }
    if null_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParam {
            field: "null_scores",
            reason: "must be finite".into(),
        });
    }
    let mut sorted = null_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let h = m as f64 * (1.0 - target_fpr);
    let r = h.round();
    if (h - r).abs() < 1e-9 && r >= 1.0 && (r as usize) < m {
        let r = r as usize;
        return Ok((sorted[r - 1] + sorted[r]) / 2.0);
    }
    let rank = (h.ceil() as usize).clamp(1, m);
    Ok(sorted[rank - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NullStats {
    pub mean: f64,
    pub std: f64,
    pub source: String,
}

impl NullStats {
    pub fn from_scores(scores: &[f64], source: impl Into<String>) -> Self {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std: var.sqrt(),
            source: source.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdSpec {
    Fixed(f64),
    /// Calibrated to a false-positive rate on null scores. `null_scores` is
    /// `None` when no null corpus was supplied, which is a configuration
    /// error at verification time.
    Fpr {
        target_fpr: f64,
        null_scores: Option<Vec<f64>>,
        source: String,
    },
}

impl ThresholdSpec {
    pub fn resolve(&self) -> Result<(f64, Option<NullStats>)> {
        match self {
            ThresholdSpec::Fixed(t) if t.is_finite() => Ok((*t, None)),
            ThresholdSpec::Fixed(_) => Err(Error::Config("threshold must be finite".into())),
            ThresholdSpec::Fpr {
                target_fpr,
                null_scores,
                source,
            } => {
                let scores = null_scores.as_deref().ok_or_else(|| {
                    Error::Config("an FPR threshold needs a null corpus to calibrate on".into())
                })?;
                let t = calibrate_threshold(scores, *target_fpr)?;
                Ok((t, Some(NullStats::from_scores(scores, source.clone()))))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub q: f64,
    pub n_counted: u64,
    pub threshold_used: f64,
    pub decision: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_stats: Option<NullStats>,
}

/// Counting and scoring for one protocol configuration, holding the
/// permutation cache across calls.
#[derive(Debug)]
pub struct Verifier {
    permuter: Permuter,
    basis: PerturbationBasis,
    n: usize,
}

impl Verifier {
    pub fn new(family: Family, backend: Backend, n: usize, vocab_size: usize) -> Result<Self> {
        Self::with_permuter(family, Permuter::new(backend, vocab_size), n)
    }

    pub fn with_permuter(family: Family, permuter: Permuter, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParam {
                field: "n",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            basis: PerturbationBasis::new(family, permuter.size())?,
            permuter,
            n,
        })
    }

    pub fn from_manifest(manifest: &WatermarkManifest) -> Result<Self> {
        Self::new(manifest.family, manifest.backend, manifest.n, manifest.vocab_size)
    }

    pub fn permuter(&self) -> &Permuter {
        &self.permuter
    }

    pub fn basis(&self) -> &PerturbationBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn counts(&self, tokens: &[TokenId], mu: &WatermarkId) -> Result<CountVector> {
        count_tokens(tokens, mu, self.n, &self.permuter)
    }

    pub fn score(&self, tokens: &[TokenId], mu: &WatermarkId, k_p: u64) -> Result<(f64, u64)> {
        let c = self.counts(tokens, mu)?;
        Ok((score(&c, k_p, &self.basis)?, c.n_counted))
    }

    pub fn verify(
        &self,
        tokens: &[TokenId],
        mu: &WatermarkId,
        k_p: u64,
        threshold: &ThresholdSpec,
    ) -> Result<VerificationReport> {
        let (threshold_used, null_stats) = threshold.resolve()?;
        let (q, n_counted) = self.score(tokens, mu, k_p)?;
        Ok(VerificationReport {
            q,
            n_counted,
            threshold_used,
            decision: q >= threshold_used,
            null_stats,
        })
    }
}

/// One-shot verification under `params`' protocol settings.
pub fn verify(
    tokens: &[TokenId],
    mu: &WatermarkId,
    k_p: u64,
    params: &crate::params::WatermarkParams,
    vocab_size: usize,
    threshold: &ThresholdSpec,
) -> Result<VerificationReport> {
    Verifier::new(params.family, params.backend, params.n, vocab_size)?.verify(tokens, mu, k_p, threshold)
}
