//! Seedable Gaussian sampling.
//!
//! The generator is fixed to PCG-64 (`Lcg128Xsl64`: 128-bit LCG state, XSL-RR
//! output to 64 bits) seeded through `SeedableRng::seed_from_u64`, and normal
//! variates come from the Box–Muller transform using 53-bit uniforms. Both
//! halves of every Box–Muller pair are used, cosine branch first. Changing any
//! of this changes every Brownian sample produced by the crate.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Standard normal sampler with a reproducible stream per seed.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    rng: Pcg64,
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Pcg64::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the logarithm is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, std_dev: f64) -> f64 {
        std_dev * self.standard()
    }
}
