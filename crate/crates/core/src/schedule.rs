//! Noise schedule: polynomial alpha with per-step clipping, gamma accessors,
//! and the transition/posterior coefficient algebra of a variance-preserving
//! diffusion process.

use crate::error::{EdmError, Result};

/// Precomputed variance-preserving schedule for `t = 0..=T`.
///
/// `alpha[t]^2 + sigma[t]^2 = 1` holds at every index; `alpha` is
/// monotonically non-increasing and `gamma(t) = -(ln alpha_t^2 - ln sigma_t^2)`
/// monotonically non-decreasing. The per-step squared ratio
/// `(alpha_t / alpha_{t-1})^2` is clipped from below at
/// [`NoiseSchedule::CLIP_FLOOR`] so that `1 / alpha_{t|t-1}` stays bounded
/// during sampling.
///
/// Gamma is the canonical numerics path (`alpha^2 = sigmoid(-gamma)`,
/// `sigma^2 = sigmoid(gamma)`, `SNR(t) = exp(-gamma)`); the raw alpha array
/// is retained for exact clipping semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    precision: f64,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    gamma: Vec<f64>,
    /// Clipped per-step squared ratios `(alpha_t / alpha_{t-1})^2`, exactly
    /// as used during construction.
    step_ratio2: Vec<f64>,
}

impl NoiseSchedule {
    pub const CLIP_FLOOR: f64 = 0.001;

    /// Polynomial schedule `alpha_t = (1 - 2s) * (1 - (t/T)^2) + s`, then
    /// per-step clipping and recomputation of alpha as the cumulative
    /// product of clipped step ratios (with `alpha_{-1} = 1`).
    pub fn polynomial(t_max: usize, precision: f64) -> Result<Self> {
        if t_max < 1 {
            return Err(EdmError::InvalidSchedule(format!("T must be >= 1, got {t_max}")));
        }
        if !(precision > 0.0 && precision < 0.5) {
            return Err(EdmError::InvalidSchedule(format!(
                "precision s must lie in (0, 0.5), got {precision}"
            )));
        }
        let raw: Vec<f64> = (0..=t_max)
            .map(|t| {
                let f = 1.0 - (t as f64 / t_max as f64).powi(2);
                (1.0 - 2.0 * precision) * f + precision
            })
            .collect();
        let mut alpha = Vec::with_capacity(t_max + 1);
        let mut step_ratio2 = Vec::with_capacity(t_max + 1);
        let mut prev_raw = 1.0; // alpha_{-1}
        let mut cumulative = 1.0;
        for &a in &raw {
            let ratio2 = ((a / prev_raw) * (a / prev_raw)).max(Self::CLIP_FLOOR);
            cumulative *= ratio2.sqrt();
            alpha.push(cumulative);
            step_ratio2.push(ratio2);
            prev_raw = a;
        }
        let sigma: Vec<f64> = alpha.iter().map(|&a| (1.0 - a * a).sqrt()).collect();
        let gamma: Vec<f64> = alpha
            .iter()
            .zip(&sigma)
            .map(|(&a, &s)| (s * s).ln() - (a * a).ln())
            .collect();
        Ok(NoiseSchedule { t_max, precision, alpha, sigma, gamma, step_ratio2 })
    }

    /// The clipped squared step ratio used at index `t` during
    /// construction.
    pub fn step_ratio2(&self, t: usize) -> f64 {
        self.step_ratio2[t]
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    /// `SNR(t) = exp(-gamma(t))`, consistent with `alpha^2 / sigma^2`.
    pub fn snr(&self, t: usize) -> f64 {
        (-self.gamma[t]).exp()
    }

    /// `SNR(t-1)/SNR(t) - 1 = expm1(gamma(t) - gamma(t-1))`, the nonnegative
    /// magnitude of the variational loss weight at step `t >= 1`.
    pub fn snr_ratio_minus_one(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_max, "t must lie in 1..=T, got {t}");
        (self.gamma[t] - self.gamma[t - 1]).exp_m1()
    }

    /// Transition coefficients `alpha_{t|u} = alpha_t / alpha_u` and
    /// `sigma_{t|u}^2 = sigma_t^2 - alpha_{t|u}^2 sigma_u^2` for `u < t`.
    pub fn transition(&self, t: usize, u: usize) -> (f64, f64) {
        assert!(u < t && t <= self.t_max, "need u < t <= T, got t={t}, u={u}");
        let alpha_ts = self.alpha[t] / self.alpha[u];
        let sigma_ts2 = self.sigma[t] * self.sigma[t] - alpha_ts * alpha_ts * self.sigma[u] * self.sigma[u];
        (alpha_ts, sigma_ts2.max(0.0))
    }

    /// Mean and stdev of the true denoising posterior `q(z_u | x, z_t)`:
    /// `mu = (alpha_{t|u} sigma_u^2 / sigma_t^2) z_t + (alpha_u sigma_{t|u}^2 / sigma_t^2) x`
    /// and `sigma = sigma_{t|u} sigma_u / sigma_t`.
    pub fn posterior(&self, t: usize, u: usize, x: &[f64], z_t: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(x.len(), z_t.len(), "posterior: x and z_t sizes differ ({} vs {})", x.len(), z_t.len());
        let (alpha_ts, sigma_ts2) = self.transition(t, u);
        let st2 = self.sigma[t] * self.sigma[t];
        let cz = alpha_ts * self.sigma[u] * self.sigma[u] / st2;
        let cx = self.alpha[u] * sigma_ts2 / st2;
        let mu = x.iter().zip(z_t).map(|(&xv, &zv)| cz * zv + cx * xv).collect();
        let sigma = sigma_ts2.sqrt() * self.sigma[u] / self.sigma[t];
        (mu, sigma)
    }
}
