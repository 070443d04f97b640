//! SplitMix64 random stream with deterministic splitting.
//!
//! Every stochastic component draws from an [`Rng`] derived from a user seed.
//! Parallel consumers each receive their own stream via [`Rng::split`], so
//! results never depend on scheduling.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Independent child stream keyed by `index`. Does not advance `self`.
    pub fn split(&self, index: u64) -> Rng {
        let key = mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        Rng::new(mix64(self.state ^ key))
    }

    /// Uniform draw in `[0, 1)` from the high 53 bits of one output.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("uniform bounds inverted: [{lo}, {hi})")));
        }
        let u = self.next_f64();
        if lo == hi {
            return Ok(lo);
        }
        let v = lo + u * (hi - lo);
        // rounding can land exactly on hi
        Ok(if v >= hi { lo } else { v })
    }

    /// Uniform integer in `[0, n)`.
    ///
    /// # Panics
    /// If `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` distinct indices from `[0, pool)`, returned in ascending order.
    pub fn sample_without_replacement(&mut self, pool: usize, count: usize) -> Result<Vec<usize>> {
        if count > pool {
            return Err(Error::invalid(format!(
                "cannot draw {count} distinct indices from a pool of {pool}"
            )));
        }
        let mut indices: Vec<usize> = (0..pool).collect();
        for i in 0..count {
            let j = i + self.below(pool - i);
            indices.swap(i, j);
        }
        indices.truncate(count);
        indices.sort_unstable();
        Ok(indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference SplitMix64 seeded with 0
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn degenerate_uniform() {
        let mut r = Rng::new(7);
        assert_eq!(r.uniform(1.0, 1.0).unwrap(), 1.0);
        assert!(r.uniform(2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_mean() {
        let mut r = Rng::new(1);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let v = r.uniform(-26.0, 26.0).unwrap();
            assert!((-26.0..26.0).contains(&v));
        }
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let base = Rng::new(9);
        let mut s0 = base.split(0);
        let mut s1 = base.split(1);
        let a: Vec<u64> = (0..16).map(|_| s0.next_u64()).collect();
        let b: Vec<u64> = (0..16).map(|_| s1.next_u64()).collect();
        assert_ne!(a, b);
        assert_eq!(base.split(0).next_u64(), a[0]);
        // split does not consume the parent
        assert_eq!(base, Rng::new(9));
    }

    #[test]
    fn split_streams_uncorrelated() {
        let base = Rng::new(2024);
        let n = 20_000;
        let mut a = base.split(3);
        let mut b = base.split(4);
        let xs: Vec<f64> = (0..n).map(|_| a.next_f64() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.next_f64() - 0.5).collect();
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // var of U(-.5,.5) is 1/12; correlation well under 3 sigma (~0.02)
        assert!((cov * 12.0).abs() < 0.03, "{cov}");
    }

    #[test]
    fn sample_full_and_empty() {
        let mut r = Rng::new(5);
        assert_eq!(r.sample_without_replacement(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(r.sample_without_replacement(4, 0).unwrap().is_empty());
        assert!(r.sample_without_replacement(4, 5).is_err());
    }

    #[test]
    fn sample_uniformity() {
        let mut r = Rng::new(11);
        let trials = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..trials {
            let s = r.sample_without_replacement(4, 2).unwrap();
            assert_eq!(s.len(), 2);
            assert_ne!(s[0], s[1]);
            for i in s {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.5).abs() < 0.02, "{freq}");
        }
    }
}
