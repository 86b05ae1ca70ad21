//! Recovering the perturbation key: the argmax of the verification score
//! over every key of the basis.
//!
//! For the fourier family all scores come from one FFT of the average
//! count vector. With `X = FFT(c)` and `Y[k] = e^{2πik/|V|} conj(X[k])`,
//! cosine key `k` scores `Re Y[k] / ||phi_k||` and sine key `half + m`
//! scores `Im Y[m] / ||phi||`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::perturb::PerturbationBasis;
use crate::types::Family;
use crate::verify::{score, CountVector};

/// Scores this close to zero are treated as exactly zero, so that
/// rounding noise cannot break ties between keys that score alike.
const ZERO_SNAP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub k_p_hat: u64,
    pub score_at_hat: f64,
    pub runner_up_margin: f64,
}

/// Score of every key in `basis.keys()` order.
pub fn key_scores(counts: &CountVector, basis: &PerturbationBasis) -> Result<Vec<f64>> {
    check(counts, basis)?;
    match basis.family() {
        Family::Fourier => Ok(fourier_scores(&counts.average())),
        Family::Square => key_scores_direct(counts, basis),
    }
}

/// Key scores by direct inner products with each basis vector.
pub fn key_scores_direct(counts: &CountVector, basis: &PerturbationBasis) -> Result<Vec<f64>> {
    check(counts, basis)?;
    basis.keys().map(|k| score(counts, k, basis)).collect()
}

fn check(counts: &CountVector, basis: &PerturbationBasis) -> Result<()> {
    if counts.n_counted == 0 {
        return Err(Error::EmptyInput("count vector"));
    }
    if counts.vocab_size() != basis.vocab_size() {
        return Err(Error::LengthMismatch {
            expected: basis.vocab_size(),
            actual: counts.vocab_size(),
        });
    }
    Ok(())
}

fn fourier_scores(avg: &[f64]) -> Vec<f64> {
    let v = avg.len();
    let half = v / 2;
    let mut buf: Vec<Complex<f64>> = avg.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(v).process(&mut buf);
    let y = |k: usize| {
        let angle = std::f64::consts::TAU * k as f64 / v as f64;
        Complex::from_polar(1.0, angle) * buf[k].conj()
    };
    // ||cos_k||^2 = |V| when 2k = 0 mod |V|, else |V| / 2; sines are |V| / 2.
    let norm = |k: usize| {
        if (2 * k) % v == 0 {
            (v as f64).sqrt()
        } else {
            (v as f64 / 2.0).sqrt()
        }
    };
    let mut out = Vec::with_capacity(v - 1);
    for k in 1..=half {
        out.push(y(k).re / norm(k));
    }
    for m in 1..(v - half) {
        out.push(y(m).im / norm(m));
    }
    out
}

/// Argmax over all keys; ties go to the smallest key.
pub fn extract_kp(counts: &CountVector, basis: &PerturbationBasis) -> Result<ExtractionResult> {
    argmax(&key_scores(counts, basis)?, basis)
}

/// As [`extract_kp`], computing every score by direct inner products.
pub fn extract_kp_direct(counts: &CountVector, basis: &PerturbationBasis) -> Result<ExtractionResult> {
    argmax(&key_scores_direct(counts, basis)?, basis)
}

fn argmax(scores: &[f64], basis: &PerturbationBasis) -> Result<ExtractionResult> {
    let (lo, _) = basis.key_range()?;
    let snapped: Vec<f64> = scores
        .iter()
        .map(|&s| if s.abs() <= ZERO_SNAP { 0.0 } else { s })
        .collect();
    let mut best = 0;
    for (i, &s) in snapped.iter().enumerate().skip(1) {
        if s > snapped[best] {
            best = i;
        }
    }
    let runner_up = snapped
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ExtractionResult {
        k_p_hat: lo + best as u64,
        score_at_hat: snapped[best],
        runner_up_margin: if runner_up.is_finite() {
            snapped[best] - runner_up
        } else {
            0.0
        },
    })
}

/// Elementwise sum of count vectors with identical provenance.
pub fn combine_counts(vectors: &[CountVector]) -> Result<CountVector> {
    let first = vectors.first().ok_or(Error::EmptyInput("count vector list"))?;
    let mut out = first.clone();
    for v in &vectors[1..] {
        if v.vocab_size() != first.vocab_size() {
            return Err(Error::Provenance(format!(
                "vocabulary size {} vs {}",
                v.vocab_size(),
                first.vocab_size()
            )));
        }
        if v.provenance != first.provenance {
            return Err(Error::Provenance(format!(
                "{:?} vs {:?}",
                v.provenance, first.provenance
            )));
        }
        for (a, b) in out.counts.iter_mut().zip(&v.counts) {
            *a += b;
        }
        out.n_counted += v.n_counted;
    }
    Ok(out)
}

/// Accuracy of guessing a key uniformly at random.
pub fn guess_baseline(basis: &PerturbationBasis) -> Result<f64> {
    let (lo, hi) = basis.key_range()?;
    Ok(1.0 / (hi - lo + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Backend, WatermarkId};
    use crate::verify::CountProvenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cv(counts: Vec<u64>) -> CountVector {
        CountVector {
            n_counted: counts.iter().sum(),
            counts,
            provenance: CountProvenance {
                mu: WatermarkId::from_u64(1),
                n: 2,
                backend: Backend::FisherYates,
            },
        }
    }

    fn fourier(v: usize) -> PerturbationBasis {
        PerturbationBasis::new(Family::Fourier, v).unwrap()
    }

    #[test]
    fn frequency_seven_is_recovered() {
        let v = 64;
        let counts: Vec<u64> = (1..=v)
            .map(|j| {
                let x = 1.0 + 0.5 * (std::f64::consts::TAU * 7.0 * j as f64 / v as f64).cos();
                (x * 1000.0).round() as u64
            })
            .collect();
        let r = extract_kp(&cv(counts), &fourier(v)).unwrap();
        assert_eq!(r.k_p_hat, 7);
        assert!(r.runner_up_margin > 0.0);
    }

    #[test]
    fn uniform_counts_tie_to_first_key() {
        let r = extract_kp(&cv(vec![5; 64]), &fourier(64)).unwrap();
        assert_eq!(r.k_p_hat, 1);
        assert_eq!(r.runner_up_margin, 0.0);
        assert_eq!(r.score_at_hat, 0.0);
        let sq = PerturbationBasis::new(Family::Square, 64).unwrap();
        assert_eq!(extract_kp(&cv(vec![5; 64]), &sq).unwrap().k_p_hat, 1);
    }

    #[test]
    fn fft_matches_direct_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in [7usize, 16, 63, 64, 100] {
            let b = fourier(v);
            for _ in 0..20 {
                let c = cv((0..v).map(|_| rng.gen_range(0..50)).collect());
                let fast = key_scores(&c, &b).unwrap();
                let slow = key_scores_direct(&c, &b).unwrap();
                for (a, s) in fast.iter().zip(&slow) {
                    assert!((a - s).abs() < 1e-9, "v={v}: {a} vs {s}");
                }
                let (f, d) = (extract_kp(&c, &b).unwrap(), extract_kp_direct(&c, &b).unwrap());
                assert_eq!(f.k_p_hat, d.k_p_hat);
                assert!((f.runner_up_margin - d.runner_up_margin).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn own_basis_vector_has_maximal_margin() {
        let b = fourier(32);
        for k in b.keys() {
            let phi = crate::perturb::basis_vector(&b, k).unwrap();
            let counts: Vec<u64> = phi.iter().map(|x| ((x + 2.0) * 1e6).round() as u64).collect();
            let r = extract_kp(&cv(counts), &b).unwrap();
            assert_eq!(r.k_p_hat, k);
        }
    }

    #[test]
    fn combining() {
        let a = cv(vec![1, 2, 3, 4]);
        assert_eq!(combine_counts(std::slice::from_ref(&a)).unwrap(), a);
        let d = combine_counts(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(d.counts, vec![2, 4, 6, 8]);
        let b = fourier(4);
        assert_eq!(score(&d, 1, &b).unwrap(), score(&a, 1, &b).unwrap());
        let mut other = a.clone();
        other.provenance.n = 3;
        assert!(matches!(combine_counts(&[a, other]), Err(Error::Provenance(_))));
        assert!(combine_counts(&[]).is_err());
    }

    #[test]
    fn baseline() {
        assert_eq!(guess_baseline(&fourier(32000)).unwrap(), 1.0 / 31999.0);
    }
}
