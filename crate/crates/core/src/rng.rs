//! Seeded, splittable random source.
//!
//! Draws come from ChaCha8 keyed by the 64-bit seed. Independent substreams
//! are derived with [`Rng::fork`], which selects a distinct ChaCha stream id
//! under the same key, so the sequence of every substream is a pure function
//! of `(seed, stream)` and does not depend on how much the parent has drawn.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent substream `stream` of this seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Index drawn with probability proportional to `weights` (inverse CDF).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn forks_are_independent_of_parent_position() {
        let parent = Rng::new(3);
        let mut drained = parent.clone();
        for _ in 0..50 {
            drained.uniform();
        }
        let mut f1 = parent.fork(2);
        let mut f2 = drained.fork(2);
        assert_eq!(f1.uniform().to_bits(), f2.uniform().to_bits());
        let mut other = parent.fork(3);
        assert_ne!(parent.fork(2).uniform().to_bits(), other.uniform().to_bits());
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[1.0, 0.0, 0.0]), 0);
            assert_ne!(rng.categorical(&[0.5, 0.0, 0.5]), 1);
        }
    }
}
