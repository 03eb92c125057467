//! Joint noise draws for the diffusion process.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::geometry;

/// One joint draw: positional part on the zero-CoG subspace (`M x 3`),
/// feature part ambient normal (`M x F`).
#[derive(Debug, Clone, PartialEq)]
pub struct JointNoise {
    pub eps_x: Vec<f64>,
    pub eps_h: Vec<f64>,
}

/// Source of joint noise. Implemented for every RNG; tests substitute
/// recording or rotating sources to pin the noise stream.
pub trait NoiseSource {
    fn draw(&mut self, m: usize, f: usize) -> JointNoise;
}

impl<R: Rng> NoiseSource for R {
    fn draw(&mut self, m: usize, f: usize) -> JointNoise {
        let eps_x = geometry::sample_subspace_noise(m, self);
        let eps_h = (0..m * f).map(|_| self.sample(StandardNormal)).collect();
        JointNoise { eps_x, eps_h }
    }
}

/// Wrapper that logs a digest of every draw, for verifying that two runs
/// consumed bitwise-identical noise streams.
pub struct LoggedNoise<S> {
    pub inner: S,
    pub log: Vec<String>,
}

impl<S> LoggedNoise<S> {
    pub fn new(inner: S) -> Self {
        LoggedNoise { inner, log: Vec::new() }
    }
}

impl<S: NoiseSource> NoiseSource for LoggedNoise<S> {
    fn draw(&mut self, m: usize, f: usize) -> JointNoise {
        let eps = self.inner.draw(m, f);
        let mut hasher = Sha256::new();
        for v in eps.eps_x.iter().chain(&eps.eps_h) {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        self.log.push(digest.iter().map(|b| format!("{b:02x}")).collect());
        eps
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
