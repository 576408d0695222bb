//! Seeded random streams.
//!
//! Every stochastic component (weight init, dropout masks, reparameterization
//! noise, synthetic data, shuffling) draws from a ChaCha8 stream keyed by a
//! 64-bit seed. Child seeds are derived with [`split`], so parallel and serial
//! consumers see the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer applied to `seed ^ key`-style mixes.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed for `key`.
pub fn split(seed: u64, key: u64) -> u64 {
    mix(mix(seed) ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Derives a child seed from a path of keys.
pub fn split_path(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(seed, |s, &k| split(s, k))
}

pub struct SeedRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via the Box–Muller transform; draws come in pairs.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
