//! Keyed pseudorandom permutation of `{0, .., size-1}` from a balanced
//! 4-round Feistel network over the smallest even-width power-of-two domain
//! covering `size`, restricted to `size` by cycle-walking.

use super::splitmix::{mix64, SplitMix64};
use super::PermKey;

const ROUNDS: usize = 4;

#[derive(Clone, Debug)]
pub struct FeistelPrp {
    size: u64,
    half_bits: u32,
    mask: u64,
    round_keys: [u64; ROUNDS],
}

impl FeistelPrp {
    pub fn new(key: PermKey, size: usize) -> Self {
        assert!(size >= 1, "domain size must be positive");
        let size = size as u64;
        let mut bits = 64 - (size - 1).leading_zeros();
        bits = bits.max(2);
        bits += bits % 2;
        let half_bits = bits / 2;
        let mut rng = SplitMix64::new(key.0);
        let round_keys = std::array::from_fn(|_| rng.next_u64());
        Self {
            size,
            half_bits,
            mask: (1u64 << half_bits) - 1,
            round_keys,
        }
    }

    #[inline]
    fn round(&self, rk: u64, half: u64) -> u64 {
        mix64(rk ^ half.wrapping_mul(0x9E37_79B9_7F4A_7C15)) & self.mask
    }

    #[inline]
    fn encrypt(&self, x: u64) -> u64 {
        let (mut l, mut r) = (x >> self.half_bits, x & self.mask);
        for &rk in &self.round_keys {
            (l, r) = (r, l ^ self.round(rk, r));
        }
        (l << self.half_bits) | r
    }

    #[inline]
    fn decrypt(&self, y: u64) -> u64 {
        let (mut l, mut r) = (y >> self.half_bits, y & self.mask);
        for &rk in self.round_keys.iter().rev() {
            (l, r) = (r ^ self.round(rk, l), l);
        }
        (l << self.half_bits) | r
    }

    pub fn forward(&self, index: u32) -> u32 {
        debug_assert!((index as u64) < self.size);
        let mut y = self.encrypt(index as u64);
        while y >= self.size {
            y = self.encrypt(y);
        }
        y as u32
    }

    pub fn inverse(&self, slot: u32) -> u32 {
        debug_assert!((slot as u64) < self.size);
        let mut x = self.decrypt(slot as u64);
        while x >= self.size {
            x = self.decrypt(x);
        }
        x as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijective_on_awkward_sizes() {
        for size in [1usize, 2, 3, 5, 12, 16, 17, 100, 1000, 4097] {
            for k in 0..5 {
                let prp = FeistelPrp::new(PermKey(k), size);
                let mut seen = vec![false; size];
                for i in 0..size as u32 {
                    let y = prp.forward(i);
                    assert!((y as usize) < size);
                    assert!(!seen[y as usize], "collision at size {size}");
                    seen[y as usize] = true;
                    assert_eq!(prp.inverse(y), i);
                }
            }
        }
    }

    #[test]
    fn keys_give_different_permutations() {
        let a = FeistelPrp::new(PermKey(1), 1024);
        let b = FeistelPrp::new(PermKey(2), 1024);
        let same = (0..1024u32).filter(|&i| a.forward(i) == b.forward(i)).count();
        assert!(same < 20, "{same} fixed agreements");
    }
}
