//! Seeded random stream.
//!
//! One `Stream` feeds every Monte Carlo draw of a run; given a seed and a
//! fixed draw order, all outputs are reproducible across platforms and
//! between the std and no_std builds.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Deterministic random stream (ChaCha8 keyed from a 64-bit seed).
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn seed_from_u64(seed: u64) -> Self {
        Stream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 mantissa bits, offset by half an ulp so 0 is excluded.
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box-Muller. Each call consumes two uniforms;
    /// the second member of the pair is discarded to keep the draw order a
    /// pure function of the call count.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}
