//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by `seed` with the 64-bit ChaCha
//! stream selector set to `stream`, so draws depend only on `(seed, stream)`
//! and the number of values consumed, never on thread scheduling or platform.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};

use crate::error::{Result, contract};

/// Single-owner deterministic random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// ±1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 { -1.0 } else { 1.0 }
    }

    /// Standard normal draw via the polar Box–Muller transform.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    /// `dim` i.i.d. draws from `N(mean, variance)`.
    pub fn gaussian_vec(&mut self, dim: usize, mean: f64, variance: f64) -> Result<Vec<f64>> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return contract(format!("variance must be finite and >= 0, got {variance}"));
        }
        let sd = variance.sqrt();
        Ok((0..dim).map(|_| mean + sd * self.standard_normal()).collect())
    }

    /// Uniform point on the unit sphere of ℝ^dim.
    pub fn unit_sphere(&mut self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return contract("unit sphere needs dim >= 1");
        }
        loop {
            let mut v = self.gaussian_vec(dim, 0.0, 1.0)?;
            let nrm = super::norm(&v);
            if nrm > 0.0 {
                v.iter_mut().for_each(|x| *x /= nrm);
                return Ok(v);
            }
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and an index path such as `(cell, run)`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}
