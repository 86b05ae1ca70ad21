//! Permutation keying: hashing `(mu, prefix)` into a permutation key and
//! mapping the vocabulary between model order (`V_o`) and watermark order
//! (`V_w`).

mod cache;
mod feistel;
mod fisher_yates;
pub mod splitmix;

use std::sync::Arc;

use sha2::{Digest, Sha256};

pub use cache::PermutationCache;
pub use feistel::FeistelPrp;
pub use fisher_yates::generate_permutation;

use crate::encoding::{canonical_encode_key_input, encode_key_input_u32};
use crate::error::{Error, Result};
use crate::types::{Backend, TokenId, WatermarkId};

pub const DEFAULT_CACHE_CAPACITY: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermKey(pub u64);

/// First 8 bytes (big-endian) of SHA-256 over the canonical key input.
pub fn derive_perm_key(mu: &WatermarkId, prefix: &[TokenId]) -> PermKey {
    let mut buf = Vec::with_capacity(8 + mu.as_bytes().len() + 4 * prefix.len());
    encode_key_input_u32(mu, prefix, &mut buf);
    hash_to_key(&buf)
}

/// Checked variant for ids that may not fit the 32-bit encoding.
pub fn derive_perm_key_checked(mu: &WatermarkId, prefix: &[u64]) -> Result<PermKey> {
    Ok(hash_to_key(&canonical_encode_key_input(mu, prefix)?))
}

fn hash_to_key(bytes: &[u8]) -> PermKey {
    let digest = Sha256::digest(bytes);
    PermKey(u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// A bijection on `{0, .., size-1}`: `forward[o]` is the `V_w` slot of
/// vocabulary entry `o`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<u32>,
}

impl Permutation {
    pub fn identity(size: usize) -> Self {
        Self {
            forward: (0..size as u32).collect(),
        }
    }

    pub fn from_forward(forward: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; forward.len()];
        for &f in &forward {
            match seen.get_mut(f as usize) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::InvalidParam {
                        field: "permutation",
                        reason: format!("{f} repeated or out of range"),
                    })
                }
            }
        }
        Ok(Self { forward })
    }

    pub(crate) fn from_forward_unchecked(forward: Vec<u32>) -> Self {
        Self { forward }
    }

    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.forward.len()];
        for (o, &w) in self.forward.iter().enumerate() {
            inv[w as usize] = o as u32;
        }
        Permutation { forward: inv }
    }
}

/// `P(k, L)`: moves `vec[i]` to slot `forward[i]`.
pub fn apply_permutation(perm: &Permutation, vec: &[f64]) -> Result<Vec<f64>> {
    if perm.len() != vec.len() {
        return Err(Error::LengthMismatch {
            expected: perm.len(),
            actual: vec.len(),
        });
    }
    let mut out = vec![0.0; vec.len()];
    for (i, &v) in vec.iter().enumerate() {
        out[perm.forward[i] as usize] = v;
    }
    Ok(out)
}

/// `P^-1(k, G)`: the value at slot `forward[i]` returns to index `i`.
pub fn apply_inverse_permutation(perm: &Permutation, vec: &[f64]) -> Result<Vec<f64>> {
    if perm.len() != vec.len() {
        return Err(Error::LengthMismatch {
            expected: perm.len(),
            actual: vec.len(),
        });
    }
    Ok(perm.forward.iter().map(|&w| vec[w as usize]).collect())
}

/// Mean of `P(k, vec)` over `keys`, using the given permuter.
pub fn average_permuted(permuter: &Permuter, keys: &[PermKey], vec: &[f64]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::EmptyInput("key sequence"));
    }
    if permuter.size() != vec.len() {
        return Err(Error::LengthMismatch {
            expected: permuter.size(),
            actual: vec.len(),
        });
    }
    let mut acc = vec![0.0; vec.len()];
    for &key in keys {
        permuter.for_each_forward(key, |o, w| acc[w as usize] += vec[o as usize]);
    }
    let k = keys.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// Vocabulary permuter for one backend and vocabulary size.
///
/// The fisher-yates backend materializes whole permutations and memoizes
/// them in a bounded LRU; the feistel backend evaluates single indices in
/// O(1) and needs no cache.
pub struct Permuter {
    backend: Backend,
    size: usize,
    cache: Option<PermutationCache>,
}

impl Permuter {
    pub fn new(backend: Backend, size: usize) -> Self {
        Self::with_cache_capacity(backend, size, DEFAULT_CACHE_CAPACITY)
    }

    /// A capacity of zero disables memoization.
    pub fn with_cache_capacity(backend: Backend, size: usize, capacity: usize) -> Self {
        assert!(size >= 1, "vocabulary size must be positive");
        let cache = (backend == Backend::FisherYates && capacity > 0)
            .then(|| PermutationCache::new(capacity));
        Self {
            backend,
            size,
            cache,
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cache(&self) -> Option<&PermutationCache> {
        self.cache.as_ref()
    }

    /// Full permutation for `key`. Memoized for fisher-yates.
    pub fn permutation(&self, key: PermKey) -> Arc<Permutation> {
        match self.backend {
            Backend::FisherYates => match &self.cache {
                Some(c) => c.get_or_insert_with(key, || generate_permutation(key, self.size)),
                None => Arc::new(generate_permutation(key, self.size)),
            },
            Backend::FeistelPrp => {
                let prp = FeistelPrp::new(key, self.size);
                Arc::new(Permutation::from_forward_unchecked(
                    (0..self.size as u32).map(|i| prp.forward(i)).collect(),
                ))
            }
        }
    }

    pub fn permuted_index(&self, key: PermKey, token: TokenId) -> u32 {
        assert!((token as usize) < self.size, "token {token} out of range");
        match self.backend {
            Backend::FisherYates => self.permutation(key).forward[token as usize],
            Backend::FeistelPrp => FeistelPrp::new(key, self.size).forward(token),
        }
    }

    pub fn inverse_permuted_index(&self, key: PermKey, slot: u32) -> TokenId {
        assert!((slot as usize) < self.size, "slot {slot} out of range");
        match self.backend {
            Backend::FisherYates => {
                let p = self.permutation(key);
                p.forward.iter().position(|&w| w == slot).expect("bijection") as TokenId
            }
            Backend::FeistelPrp => FeistelPrp::new(key, self.size).inverse(slot),
        }
    }

    /// Calls `f(token, slot)` for every vocabulary entry.
    pub fn for_each_forward(&self, key: PermKey, mut f: impl FnMut(TokenId, u32)) {
        match self.backend {
            Backend::FisherYates => {
                let p = self.permutation(key);
                for (o, &w) in p.forward.iter().enumerate() {
                    f(o as TokenId, w);
                }
            }
            Backend::FeistelPrp => {
                let prp = FeistelPrp::new(key, self.size);
                for o in 0..self.size as u32 {
                    f(o, prp.forward(o));
                }
            }
        }
    }
}

impl std::fmt::Debug for Permuter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Permuter")
            .field("backend", &self.backend)
            .field("size", &self.size)
            .field("cached", &self.cache.as_ref().map(|c| c.len()))
            .finish()
    }
}
