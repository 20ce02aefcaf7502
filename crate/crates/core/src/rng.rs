//! Seeded randomness.
//!
//! Every random draw in the crate (initialization, shuffling, dropout,
//! attack masks, landscape directions, synthetic data) goes through [`Rng`],
//! a ChaCha8 stream cipher used as a counter-based generator. ChaCha8 output
//! is specified bit-for-bit, so a given `(seed, stream)` pair yields the same
//! sequence on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Name of the generator, recorded in run manifests.
pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream for the same seed; used to give each consumer
    /// (shuffle, masks, dropout, ...) its own sequence.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `true` with probability `p`. `p = 0` never fires and `p = 1` always does.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.inner.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}

/// Stream ids reserved for the different consumers of one run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const ATTACK: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const LANDSCAPE: u64 = 7;
}
