//! Seeded random numbers shared by every stochastic component.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) keyed with the
//! 64-bit seed written little-endian into the first 8 key bytes, remaining
//! key bytes zero, stream 0. Uniforms take the top 53 bits of `next_u64`:
//! `u = (w >> 11) * 2^-53` in `[0, 1)`. Gaussians use Box–Muller on a pair
//! of consecutive uniforms `(u1, u2)`:
//!
//! ```text
//! r = sqrt(-2 ln(1 - u1));  g0 = r cos(2π u2);  g1 = r sin(2π u2)
//! ```
//!
//! and hand out `g0` then `g1`. Both uniforms are always consumed, so the
//! stream position after `n` Gaussians is `2 * ceil(n / 2)` words.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct SeededRng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        SeededRng {
            inner: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare.take() {
            return g;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let phase = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * phase.sin());
        r * phase.cos()
    }
}
