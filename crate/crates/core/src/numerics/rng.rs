//! Seeded randomness.
//!
//! Every stochastic choice in the crate draws from [`Rng`], a
//! xoshiro256** generator (Blackman & Vigna) whose 256-bit state is expanded
//! from a 64-bit seed with SplitMix64. The stream is identical on every
//! platform. Independent stages derive their own seeds from one root seed
//! through [`substream`], so re-running a single stage reproduces exactly
//! what the full pipeline would have produced.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Generator for the named substream of `root`.
    pub fn derive(root: u64, name: &str) -> Self {
        Self::new(substream(root, name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        z * std
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Seed of the substream `name` under `root` (FNV-1a over the name, mixed
/// with the root by a SplitMix64 finalizer).
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_pinned() {
        // Reference values of xoshiro256** seeded through SplitMix64(0).
        let mut r = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        let mut again = Rng::new(0);
        let second: Vec<u64> = (0..3).map(|_| again.next_u64()).collect();
        assert_eq!(first, second);
        assert_eq!(first[0], 0x99ec_5f36_cb75_f2b4);
    }

    #[test]
    fn substreams_differ_by_name_and_root() {
        assert_ne!(substream(7, "init"), substream(7, "batching"));
        assert_ne!(substream(7, "init"), substream(8, "init"));
        assert_eq!(substream(7, "init"), substream(7, "init"));
    }
}
