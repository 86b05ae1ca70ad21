//! Orthogonal perturbation families and the perturbed-logit operator.
//!
//! Basis values are indexed by `V_w` slot `s = j - 1` for `j = 1..=|V|`.
//!
//! * fourier, `1 <= k <= |V|-1`: `cos(2π k j/|V|)` for `k <= ⌊|V|/2⌋`,
//!   otherwise `sin(2π (k - ⌊|V|/2⌋) j/|V|)`.
//! * square, `1 <= k <= 2 k_N - 1` where `2^k_N` is the largest power of two
//!   dividing `|V|`: `(-1)^⌊2^k j/|V|⌋` for `k <= k_N`, otherwise
//!   `(-1)^⌊2^(k-k_N) j/|V| + 1/2⌋`.

use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use lru::LruCache;
use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::keying::{PermKey, Permuter};
use crate::types::Family;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PerturbationBasis {
    family: Family,
    vocab_size: usize,
}

/// A basis vector together with its Euclidean norm.
#[derive(Debug)]
pub struct BasisVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl PerturbationBasis {
    pub fn new(family: Family, vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::UnsupportedVocabSize {
                vocab_size,
                reason: "need at least two tokens",
            });
        }
        if family == Family::Square && square_order(vocab_size) < 2 {
            return Err(Error::UnsupportedVocabSize {
                vocab_size,
                reason: "square waves need |V| divisible by 4",
            });
        }
        Ok(Self { family, vocab_size })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Inclusive range of valid perturbation keys.
    pub fn key_range(&self) -> Result<(u64, u64)> {
        match self.family {
            Family::Fourier => Ok((1, self.vocab_size as u64 - 1)),
            Family::Square => Ok((1, 2 * square_order(self.vocab_size) as u64 - 1)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> {
        let (lo, hi) = self.key_range().expect("validated at construction");
        lo..=hi
    }

    pub fn check_key(&self, k_p: u64) -> Result<()> {
        let (lo, hi) = self.key_range()?;
        if k_p < lo || k_p > hi {
            return Err(Error::KeyOutOfRange { k_p, lo, hi });
        }
        Ok(())
    }

    /// Cached basis vector for `k_p`.
    pub fn vector(&self, k_p: u64) -> Result<Arc<BasisVector>> {
        self.check_key(k_p)?;
        let cache = basis_cache();
        let id = (self.family, self.vocab_size, k_p);
        if let Some(v) = cache.lock().get(&id) {
            return Ok(Arc::clone(v));
        }
        let values = self.compute(k_p);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let v = Arc::new(BasisVector { values, norm });
        cache.lock().put(id, Arc::clone(&v));
        Ok(v)
    }

    /// Uncached evaluation. Callers must have range-checked `k_p`.
    pub(crate) fn compute(&self, k_p: u64) -> Vec<f64> {
        let v = self.vocab_size as u64;
        match self.family {
            Family::Fourier => {
                let half = v / 2;
                let turns = turn_table(v);
                let (freq, table) = if k_p <= half {
                    (k_p, &turns.0)
                } else {
                    (k_p - half, &turns.1)
                };
                let mut m = 0u64;
                (1..=v)
                    .map(|_| {
                        m += freq;
                        if m >= v {
                            m -= v;
                        }
                        table[m as usize]
                    })
                    .collect()
            }
            Family::Square => {
                let k_n = square_order(self.vocab_size) as u64;
                (1..=v)
                    .map(|j| {
                        let exponent = if k_p <= k_n {
                            ((1u128 << k_p) * j as u128) / v as u128
                        } else {
                            // ⌊2^(k-kN) j/|V| + 1/2⌋ = ⌊(2^(k-kN+1) j + |V|) / 2|V|⌋
                            ((1u128 << (k_p - k_n + 1)) * j as u128 + v as u128)
                                / (2 * v as u128)
                        };
                        if exponent % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Public entry point mirroring [`PerturbationBasis::vector`].
pub fn basis_vector(basis: &PerturbationBasis, k_p: u64) -> Result<Vec<f64>> {
    Ok(basis.vector(k_p)?.values.clone())
}

/// Largest `k` with `2^k | size`.
pub fn square_order(size: usize) -> u32 {
    if size == 0 {
        0
    } else {
        size.trailing_zeros()
    }
}

/// `cos(2π m/v)`, exact at quarter turns.
fn cos_turns(m: u64, v: u64) -> f64 {
    if (4 * m as u128) % v as u128 == 0 {
        return [1.0, 0.0, -1.0, 0.0][(4 * m as u128 / v as u128) as usize % 4];
    }
    (std::f64::consts::TAU * m as f64 / v as f64).cos()
}

/// `sin(2π m/v)`, exact at quarter turns.
fn sin_turns(m: u64, v: u64) -> f64 {
    if (4 * m as u128) % v as u128 == 0 {
        return [0.0, 1.0, 0.0, -1.0][(4 * m as u128 / v as u128) as usize % 4];
    }
    (std::f64::consts::TAU * m as f64 / v as f64).sin()
}

type TurnTable = Arc<(Vec<f64>, Vec<f64>)>;

/// `cos_turns(m, v)` and `sin_turns(m, v)` for every `m < v`.
fn turn_table(v: u64) -> TurnTable {
    static CACHE: OnceLock<Mutex<LruCache<u64, TurnTable>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(LruCache::new(NonZeroUsize::new(4).expect("nonzero"))));
    if let Some(t) = cache.lock().get(&v) {
        return Arc::clone(t);
    }
    let t = Arc::new((
        (0..v).map(|m| cos_turns(m, v)).collect(),
        (0..v).map(|m| sin_turns(m, v)).collect(),
    ));
    cache.lock().put(v, Arc::clone(&t));
    t
}

fn basis_cache() -> &'static Mutex<LruCache<(Family, usize, u64), Arc<BasisVector>>> {
    static CACHE: OnceLock<Mutex<LruCache<(Family, usize, u64), Arc<BasisVector>>>> =
        OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(LruCache::new(NonZeroUsize::new(64).expect("nonzero"))))
}

/// Perturbed logits in model order:
/// `out[t] = logits[t] + kappa * phi[P(key, t)]`, which equals
/// `P^-1(key, F(k_p, kappa, P(key, logits)))`.
pub fn perturb_logits(
    logits: &[f64],
    key: PermKey,
    k_p: u64,
    kappa: f64,
    basis: &PerturbationBasis,
    permuter: &Permuter,
) -> Result<Vec<f64>> {
    if logits.len() != basis.vocab_size() || permuter.size() != basis.vocab_size() {
        return Err(Error::LengthMismatch {
            expected: basis.vocab_size(),
            actual: logits.len(),
        });
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParam {
            field: "kappa",
            reason: "must be a non-negative finite number".into(),
        });
    }
    let phi = basis.vector(k_p)?;
    if kappa == 0.0 {
        return Ok(logits.to_vec());
    }
    let mut out = logits.to_vec();
    permuter.for_each_forward(key, |t, w| out[t as usize] += kappa * phi.values[w as usize]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keying::{apply_inverse_permutation, apply_permutation, Permutation};
    use crate::types::Backend;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fourier(v: usize) -> PerturbationBasis {
        PerturbationBasis::new(Family::Fourier, v).unwrap()
    }

    fn square(v: usize) -> PerturbationBasis {
        PerturbationBasis::new(Family::Square, v).unwrap()
    }

    #[test]
    fn hand_derived_fourier_vectors() {
        assert_eq!(basis_vector(&fourier(4), 1).unwrap(), vec![0.0, -1.0, 0.0, 1.0]);
        assert_eq!(basis_vector(&fourier(4), 3).unwrap(), vec![1.0, 0.0, -1.0, 0.0]);
        assert_eq!(basis_vector(&fourier(4), 2).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn hand_derived_square_vector() {
        let v = basis_vector(&square(8), 1).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0]);
        assert_eq!(v.iter().sum::<f64>(), 0.0);
        assert_eq!(square(8).key_range().unwrap(), (1, 5));
    }

    #[test]
    fn key_ranges_and_errors() {
        assert_eq!(fourier(1024).key_range().unwrap(), (1, 1023));
        assert_eq!(square(1024).key_range().unwrap(), (1, 19));
        assert!(matches!(
            PerturbationBasis::new(Family::Square, 6),
            Err(Error::UnsupportedVocabSize { .. })
        ));
        assert!(fourier(4).vector(0).is_err());
        assert!(fourier(4).vector(4).is_err());
    }

    #[test]
    fn square_family_is_exactly_orthogonal() {
        for v in [8usize, 12, 64, 1024] {
            let b = square(v);
            let vecs: Vec<Vec<f64>> = b.keys().map(|k| b.compute(k)).collect();
            for (i, a) in vecs.iter().enumerate() {
                assert_eq!(a.iter().sum::<f64>(), 0.0, "|V|={v} k={}", i + 1);
                assert_eq!(a.iter().map(|x| x * x).sum::<f64>(), v as f64);
                for c in &vecs[i + 1..] {
                    let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                    assert_eq!(dot, 0.0);
                }
            }
        }
    }

    #[test]
    fn fourier_family_is_orthogonal_small() {
        for v in [7usize, 16, 64] {
            let b = fourier(v);
            let vecs: Vec<Vec<f64>> = b.keys().map(|k| b.compute(k)).collect();
            for (i, a) in vecs.iter().enumerate() {
                let k = i as u64 + 1;
                assert!(a.iter().sum::<f64>().abs() <= 1e-9 * v as f64);
                let norm2: f64 = a.iter().map(|x| x * x).sum();
                let expect = if v % 2 == 0 && k == v as u64 / 2 { v as f64 } else { v as f64 / 2.0 };
                assert!((norm2 - expect).abs() < 1e-9, "|V|={v} k={k} norm2={norm2}");
                for c in &vecs[i + 1..] {
                    let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                    assert!(dot.abs() <= 1e-9 * v as f64);
                }
            }
        }
    }

    #[test]
    fn kappa_zero_is_bitwise_identity() {
        let b = fourier(16);
        let permuter = Permuter::new(Backend::FisherYates, 16);
        let logits: Vec<f64> = (0..16).map(|i| if i == 3 { -0.0 } else { i as f64 * 0.1 }).collect();
        let out = perturb_logits(&logits, PermKey(1), 5, 0.0, &b, &permuter).unwrap();
        assert!(out.iter().zip(&logits).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn identity_permutation_example() {
        let b = fourier(4);
        // find a key whose fisher-yates permutation of size 4 is the identity
        let permuter = Permuter::new(Backend::FisherYates, 4);
        let key = (0u64..)
            .map(PermKey)
            .find(|&k| permuter.permutation(k).forward() == [0, 1, 2, 3])
            .unwrap();
        let out = perturb_logits(&[0.0; 4], key, 1, 2.0, &b, &permuter).unwrap();
        assert_eq!(out, vec![0.0, -2.0, 0.0, 2.0]);
    }

    #[test]
    fn fused_form_matches_literal_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for backend in [Backend::FisherYates, Backend::FeistelPrp] {
            for _ in 0..100 {
                let v = 64;
                let b = fourier(v);
                let permuter = Permuter::new(backend, v);
                let key = PermKey(rng.gen());
                let k_p = rng.gen_range(1..v as u64);
                let kappa = rng.gen_range(0.0..8.0);
                let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let fused = perturb_logits(&logits, key, k_p, kappa, &b, &permuter).unwrap();

                let perm: Permutation = (*permuter.permutation(key)).clone();
                let phi = basis_vector(&b, k_p).unwrap();
                let mut in_w = apply_permutation(&perm, &logits).unwrap();
                for (x, p) in in_w.iter_mut().zip(&phi) {
                    *x += kappa * p;
                }
                let literal = apply_inverse_permutation(&perm, &in_w).unwrap();
                assert!(fused.iter().zip(&literal).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let b = fourier(8);
        let permuter = Permuter::new(Backend::FisherYates, 8);
        assert!(perturb_logits(&[0.0; 7], PermKey(0), 1, 1.0, &b, &permuter).is_err());
    }

    #[test]
    fn uniform_shift_commutes_with_perturbation() {
        let v = 32;
        let b = fourier(v);
        let permuter = Permuter::new(Backend::FisherYates, v);
        let logits: Vec<f64> = (0..v).map(|i| (i as f64 * 0.37).sin()).collect();
        let shifted: Vec<f64> = logits.iter().map(|x| x + 5.0).collect();
        let a = softmax(&perturb_logits(&shifted, PermKey(8), 3, 2.0, &b, &permuter).unwrap());
        let c: Vec<f64> = perturb_logits(&logits, PermKey(8), 3, 2.0, &b, &permuter)
            .unwrap()
            .iter()
            .map(|x| x + 5.0)
            .collect();
        let c = softmax(&c);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn softmax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }
}
