//! Token selection from a logit vector.

use rand::Rng;

use crate::params::SamplingConfig;
use crate::types::TokenId;

/// `softmax(logits / temperature)`, computed with the max subtracted.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest logit; ties go to the smallest id.
pub fn argmax(logits: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Draws one token. Uses exactly one uniform draw from `rng` for the
/// stochastic strategies and none for greedy.
pub fn sample_token(logits: &[f64], config: &SamplingConfig, rng: &mut impl Rng) -> TokenId {
    use crate::params::Strategy;
    match config.strategy {
        Strategy::Greedy | Strategy::Beam => argmax(logits),
        Strategy::Multinomial => {
            let probs = softmax(logits, config.temperature);
            let u: f64 = rng.gen();
            if config.top_p >= 1.0 {
                draw(probs.iter().enumerate().map(|(i, &p)| (i, p)), 1.0, u)
            } else {
                let nucleus = nucleus(&probs, config.top_p);
                let mass: f64 = nucleus.iter().map(|&i| probs[i]).sum();
                draw(nucleus.iter().map(|&i| (i, probs[i])), mass, u)
            }
        }
    }
}

/// Smallest set of most probable tokens whose mass reaches `top_p`, in
/// descending probability with ties by id.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut keep = 0;
    for &i in &order {
        acc += probs[i];
        keep += 1;
        if acc >= top_p {
            break;
        }
    }
    order.truncate(keep);
    order
}

fn draw(items: impl Iterator<Item = (usize, f64)>, mass: f64, u: f64) -> TokenId {
    let target = u * mass;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in items {
        acc += p;
        last = i;
        if target < acc {
            return i as TokenId;
        }
    }
    last as TokenId
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one_and_respects_temperature() {
        let p = softmax(&[1.0, 2.0, 3.0], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let hot = softmax(&[1.0, 2.0, 3.0], 10.0);
        assert!(hot[2] < p[2]);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let l = [0.3, -1.0, 2.5, 0.0];
        let a = log_softmax(&l);
        let b = softmax(&l, 1.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.exp() - y).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_ties_to_smallest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn nucleus_keeps_minimal_prefix() {
        let p = [0.1, 0.5, 0.3, 0.1];
        assert_eq!(nucleus(&p, 0.5), vec![1]);
        assert_eq!(nucleus(&p, 0.8), vec![1, 2]);
        assert_eq!(nucleus(&p, 0.85), vec![1, 2, 0]);
    }

    #[test]
    fn top_p_never_samples_outside_nucleus() {
        let logits = [0.0, 2.0, 1.5, -3.0];
        let cfg = SamplingConfig {
            top_p: 0.6,
            ..SamplingConfig::default()
        };
        let allowed = nucleus(&softmax(&logits, 1.0), 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let t = sample_token(&logits, &cfg, &mut rng) as usize;
            assert!(allowed.contains(&t));
        }
    }

    #[test]
    fn multinomial_frequencies_follow_softmax() {
        let logits = [0.0, 1.0, 2.0];
        let p = softmax(&logits, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            counts[sample_token(&logits, &SamplingConfig::default(), &mut rng) as usize] += 1;
        }
        for i in 0..3 {
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() < 0.01);
        }
    }
}
