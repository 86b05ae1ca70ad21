use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waterfall_core::extract::{extract_kp, extract_kp_direct, key_scores, key_scores_direct};
use waterfall_core::keying::Permuter;
use waterfall_core::verify::{count_tokens, CountProvenance};
use waterfall_core::{Backend, CountVector, Family, PerturbationBasis, WatermarkId};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fourier_norm_sq(v: usize, k: u64) -> f64 {
    if 2 * k as usize == v {
        v as f64
    } else {
        v as f64 / 2.0
    }
}

#[test]
fn fourier_family_is_orthogonal_and_zero_mean_exhaustively() {
    for v in [64usize, 1024] {
        let b = PerturbationBasis::new(Family::Fourier, v).unwrap();
        let vectors: Vec<Vec<f64>> = b.keys().map(|k| b.vector(k).unwrap().values.clone()).collect();
        let tol = 1e-9 * v as f64;
        for (i, a) in vectors.iter().enumerate() {
            let k = i as u64 + 1;
            assert!(a.iter().sum::<f64>().abs() <= tol, "v={v} k={k} mean");
            assert!((dot(a, a) - fourier_norm_sq(v, k)).abs() <= tol, "v={v} k={k} norm");
            for c in &vectors[i + 1..] {
                assert!(dot(a, c).abs() <= tol, "v={v} k={k}");
            }
        }
    }
}

/// Every key at |V| = 32768 is checked for zero mean, norm and orthogonality
/// to a fixed panel of keys; all pairs would be 5e8 inner products.
#[test]
fn fourier_family_at_32768() {
    let v = 32768usize;
    let b = PerturbationBasis::new(Family::Fourier, v).unwrap();
    let panel: Vec<(u64, Vec<f64>)> = [1u64, 7, 8192, 16384, 16385, 32767]
        .iter()
        .map(|&k| (k, b.vector(k).unwrap().values.clone()))
        .collect();
    let tol = 1e-9 * v as f64;
    for k in b.keys() {
        let phi = b.vector(k).unwrap();
        assert!(phi.values.iter().sum::<f64>().abs() <= tol, "k={k} mean");
        assert!((phi.norm * phi.norm - fourier_norm_sq(v, k)).abs() <= tol, "k={k} norm");
        for (l, other) in &panel {
            if *l != k {
                assert!(dot(&phi.values, other).abs() <= tol, "k={k} l={l}");
            }
        }
    }
}

#[test]
fn square_family_is_exactly_orthogonal() {
    for v in [64usize, 1024, 32768] {
        let b = PerturbationBasis::new(Family::Square, v).unwrap();
        let vectors: Vec<Vec<f64>> = b.keys().map(|k| b.vector(k).unwrap().values.clone()).collect();
        for (i, a) in vectors.iter().enumerate() {
            assert_eq!(a.iter().sum::<f64>(), 0.0, "v={v}");
            assert_eq!(dot(a, a), v as f64, "v={v}");
            for c in &vectors[i + 1..] {
                assert_eq!(dot(a, c), 0.0, "v={v}");
            }
        }
    }
}

#[test]
fn hand_derived_vectors() {
    let f4 = PerturbationBasis::new(Family::Fourier, 4).unwrap();
    let expected = [[0.0, -1.0, 0.0, 1.0], [-1.0, 1.0, -1.0, 1.0], [1.0, 0.0, -1.0, 0.0]];
    for (k, e) in (1..=3).zip(expected) {
        assert_eq!(f4.vector(k).unwrap().values, e);
    }
    let s8 = PerturbationBasis::new(Family::Square, 8).unwrap();
    let expected: [[f64; 8]; 5] = [
        [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0],
        [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
        [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0],
    ];
    assert_eq!(s8.key_range().unwrap(), (1, 5));
    for (k, e) in (1..=5).zip(expected) {
        assert_eq!(s8.vector(k).unwrap().values, e, "k={k}");
    }
}

fn dense_counts(rng: &mut ChaCha8Rng, v: usize) -> CountVector {
    let mut counts: Vec<u64> = (0..v).map(|_| rng.gen_range(0..40)).collect();
    counts[0] += 1;
    CountVector {
        n_counted: counts.iter().sum(),
        counts,
        provenance: CountProvenance {
            mu: WatermarkId::from_u64(0),
            n: 2,
            backend: Backend::FisherYates,
        },
    }
}

#[test]
fn fft_scores_match_direct_on_dense_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for v in [64usize, 1024] {
        let b = PerturbationBasis::new(Family::Fourier, v).unwrap();
        for _ in 0..100 {
            let c = dense_counts(&mut rng, v);
            let fast = key_scores(&c, &b).unwrap();
            let slow = key_scores_direct(&c, &b).unwrap();
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() <= 1e-9, "v={v}: {x} vs {y}");
            }
            let (f, d) = (extract_kp(&c, &b).unwrap(), extract_kp_direct(&c, &b).unwrap());
            assert_eq!(f.k_p_hat, d.k_p_hat);
            assert!((f.score_at_hat - d.score_at_hat).abs() <= 1e-9);
        }
    }
}

/// Counts from 400-token streams are sparse, so the direct oracle only sums
/// over occupied slots.
#[test]
fn fft_scores_match_direct_at_32768() {
    let v = 32768usize;
    let b = PerturbationBasis::new(Family::Fourier, v).unwrap();
    let permuter = Permuter::new(Backend::FisherYates, v);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let vectors: Vec<CountVector> = (0..100)
        .map(|i| {
            let tokens: Vec<u32> = (0..400).map(|_| rng.gen_range(0..v as u32)).collect();
            count_tokens(&tokens, &WatermarkId::from_u64(i), 2, &permuter).unwrap()
        })
        .collect();
    let fast: Vec<Vec<f64>> = vectors.iter().map(|c| key_scores(c, &b).unwrap()).collect();
    let occupied: Vec<Vec<(usize, f64)>> = vectors
        .iter()
        .map(|c| {
            let n = c.n_counted as f64;
            c.counts
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0)
                .map(|(s, &x)| (s, x as f64 / n))
                .collect()
        })
        .collect();
    let mut best = vec![(0u64, f64::NEG_INFINITY); vectors.len()];
    for k in b.keys() {
        let phi = b.vector(k).unwrap();
        for (i, occ) in occupied.iter().enumerate() {
            let q: f64 = occ.iter().map(|&(s, a)| a * phi.values[s] / phi.norm).sum();
            let got = fast[i][k as usize - 1];
            assert!((got - q).abs() <= 1e-9, "k={k}: {got} vs {q}");
            if q > best[i].1 + 1e-12 {
                best[i] = (k, q);
            }
        }
    }
    for (c, (k, _)) in vectors.iter().zip(best) {
        assert_eq!(extract_kp(c, &b).unwrap().k_p_hat, k);
    }
}
