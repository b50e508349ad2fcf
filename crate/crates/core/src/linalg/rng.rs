//! Explicit, reproducible randomness.
//!
//! An [`RngState`] is a plain value: `(seed, stream)`. Sampling from it builds a
//! ChaCha8 generator keyed by the seed on the given stream, draws uniforms, and
//! turns them into Gaussians with the Box–Muller transform evaluated through
//! `libm`, so a given state yields the same samples on every platform.
//! Nothing here touches global state; callers derive independent streams with
//! [`RngState::fork`].

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derives an independent stream identified by `label`.
    pub fn fork(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    pub fn sampler(&self) -> Sampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Sampler { rng, spare: None }
    }

    /// `rows x cols` matrix of i.i.d. standard normal entries.
    pub fn gaussian_matrix(&self, rows: usize, cols: usize) -> DenseMatrix {
        let mut s = self.sampler();
        DenseMatrix::from_fn(rows, cols, |_, _| s.gaussian())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateful sampler produced from an [`RngState`].
pub struct Sampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // multiply-shift; bias is negligible for the sizes used here
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_stream() {
        let a = RngState::new(42).gaussian_matrix(4, 5);
        let b = RngState::new(42).gaussian_matrix(4, 5);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = RngState::new(43).gaussian_matrix(4, 5);
        assert_ne!(a.as_slice(), c.as_slice());
        let d = RngState::new(42).fork(1).gaussian_matrix(4, 5);
        assert_ne!(a.as_slice(), d.as_slice());
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut s = RngState::new(7).sampler();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        RngState::new(3).sampler().shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
