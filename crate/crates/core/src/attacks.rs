//! Token-level attacks on watermarked streams: random insertion, deletion
//! and substitution, and re-watermarking with a second id.
//!
//! Rates are fractions of tokens, not words. An attack at rate `r` on `L`
//! tokens touches exactly `floor(r * L)` positions.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::WatermarkParams;
use crate::providers::LogitProvider;
use crate::types::{check_ids, TokenId};
use crate::vocab::VocabModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Insert,
    Delete,
    Substitute,
    Overlap,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Insert => "insert",
            AttackKind::Delete => "delete",
            AttackKind::Substitute => "substitute",
            AttackKind::Overlap => "overlap",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insert" => Ok(AttackKind::Insert),
            "delete" => Ok(AttackKind::Delete),
            "substitute" => Ok(AttackKind::Substitute),
            "overlap" => Ok(AttackKind::Overlap),
            other => Err(Error::Config(format!("unknown attack kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttackOutcome {
    pub tokens: Vec<TokenId>,
    /// `floor(rate * len)`.
    pub requested: usize,
    pub applied: usize,
    /// Positions chosen for substitution that had no table entry.
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn attacked_count(rate: f64, len: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParam {
            field: "rate",
            reason: format!("{rate} is outside [0, 1]"),
        });
    }
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    Ok(((rate * len as f64) + 1e-9).floor() as usize)
}

/// Inserts `floor(rate * len)` uniformly drawn tokens, each at a uniformly
/// drawn position of the growing stream.
pub fn insert_attack(tokens: &[TokenId], rate: f64, vocab_size: usize, rng_seed: u64) -> Result<AttackOutcome> {
    let count = attacked_count(rate, tokens.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = tokens.to_vec();
    for _ in 0..count {
        let pos = rng.gen_range(0..=out.len());
        let t = rng.gen_range(0..vocab_size as TokenId);
        out.insert(pos, t);
    }
    Ok(AttackOutcome {
        tokens: out,
        requested: count,
        applied: count,
        skipped: 0,
        warning: None,
    })
}

/// Removes `floor(rate * len)` distinct uniformly drawn positions. Warns
/// when fewer than `min_len` tokens remain.
pub fn delete_attack(tokens: &[TokenId], rate: f64, min_len: usize, rng_seed: u64) -> Result<AttackOutcome> {
    let count = attacked_count(rate, tokens.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut drop = vec![false; tokens.len()];
    for i in sample(&mut rng, tokens.len(), count) {
        drop[i] = true;
    }
    let out: Vec<TokenId> = tokens
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(&t, _)| t)
        .collect();
    let warning = (out.len() < min_len)
        .then(|| format!("only {} tokens remain, fewer than {min_len}", out.len()));
    Ok(AttackOutcome {
        tokens: out,
        requested: count,
        applied: count,
        skipped: 0,
        warning,
    })
}

/// Token replacement lists standing in for synonym sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubstitutionTable {
    map: BTreeMap<TokenId, Vec<TokenId>>,
}

impl SubstitutionTable {
    pub fn new(map: BTreeMap<TokenId, Vec<TokenId>>, vocab_size: usize) -> Result<Self> {
        for (&t, reps) in &map {
            check_ids(&[t], vocab_size)?;
            check_ids(reps, vocab_size)?;
            if reps.is_empty() || reps.iter().all(|&r| r == t) {
                return Err(Error::InvalidParam {
                    field: "substitution table",
                    reason: format!("token {t} needs a replacement other than itself"),
                });
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, token: TokenId) -> Option<&[TokenId]> {
        self.map.get(&token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Builds replacement lists from distributional similarity: each token
    /// seen at least `min_count` times maps to the `k` tokens whose
    /// left/right neighbour distributions have the highest cosine similarity
    /// with its own. Tokens in `exclude` are neither sources nor targets.
    pub fn from_corpus(
        streams: &[Vec<TokenId>],
        vocab_size: usize,
        k: usize,
        min_count: u64,
        exclude: &[TokenId],
    ) -> Result<Self> {
        let mut freq = vec![0u64; vocab_size];
        let mut ctx: Vec<HashMap<u32, f64>> = vec![HashMap::new(); vocab_size];
        for s in streams {
            check_ids(s, vocab_size)?;
            for (i, &t) in s.iter().enumerate() {
                freq[t as usize] += 1;
                if i > 0 {
                    *ctx[t as usize].entry(2 * s[i - 1]).or_default() += 1.0;
                }
                if i + 1 < s.len() {
                    *ctx[t as usize].entry(2 * s[i + 1] + 1).or_default() += 1.0;
                }
            }
        }
        let candidates: Vec<usize> = (0..vocab_size)
            .filter(|&t| freq[t] >= min_count && !exclude.contains(&(t as TokenId)))
            .collect();
        let vectors: Vec<Vec<(u32, f64)>> = candidates
            .iter()
            .map(|&t| {
                let mut v: Vec<(u32, f64)> = ctx[t].iter().map(|(&d, &x)| (d, x)).collect();
                v.sort_unstable_by_key(|&(d, _)| d);
                let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|(_, x)| *x /= norm);
                v
            })
            .collect();
        let mut map = BTreeMap::new();
        for (a, va) in vectors.iter().enumerate() {
            let mut sims: Vec<(f64, usize)> = vectors
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, vb)| (sparse_dot(va, vb), b))
                .filter(|&(s, _)| s > 0.0)
                .collect();
            sims.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            sims.truncate(k);
            if !sims.is_empty() {
                map.insert(
                    candidates[a] as TokenId,
                    sims.iter().map(|&(_, b)| candidates[b] as TokenId).collect(),
                );
            }
        }
        Self::new(map, vocab_size)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.map).expect("table serializes")
    }

    pub fn from_json(bytes: &[u8], vocab_size: usize) -> Result<Self> {
        Self::new(serde_json::from_slice(bytes)?, vocab_size)
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Picks `floor(rate * len)` distinct positions and replaces each token
/// that has a table entry with a uniform choice from it.
pub fn substitute_attack(
    tokens: &[TokenId],
    rate: f64,
    table: &SubstitutionTable,
    rng_seed: u64,
) -> Result<AttackOutcome> {
    let count = attacked_count(rate, tokens.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut positions = sample(&mut rng, tokens.len(), count).into_vec();
    positions.sort_unstable();
    let mut out = tokens.to_vec();
    let mut applied = 0;
    for p in positions {
        match table.get(out[p]) {
            Some(reps) => {
                out[p] = reps[rng.gen_range(0..reps.len())];
                applied += 1;
            }
            None => {}
        }
    }
    Ok(AttackOutcome {
        tokens: out,
        requested: count,
        applied,
        skipped: count - applied,
        warning: None,
    })
}

/// Re-watermarks the detokenized stream with `second`.
pub fn overlap_attack(
    tokens: &[TokenId],
    second: &WatermarkParams,
    provider: &dyn LogitProvider,
    vocab: &VocabModel,
) -> Result<AttackOutcome> {
    let text = vocab.decode_text(tokens)?;
    let out = crate::watermark::watermark_text(&text, second, provider, vocab)?;
    Ok(AttackOutcome {
        requested: tokens.len(),
        applied: tokens.len(),
        skipped: 0,
        warning: None,
        tokens: out.ids,
    })
}
