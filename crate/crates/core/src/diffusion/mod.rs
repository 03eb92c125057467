//! The equivariant diffusion model: joint noising over coordinates and
//! invariant features, training losses, ancestral sampling, the zeroth
//! likelihood decoders, and the unbiased log-likelihood estimator.

mod dist;
mod noise;
mod train;

#[cfg(test)]
mod tests;

pub use dist::{ConditionDistribution, SizeDistribution};
pub use noise::{normal_cdf, JointNoise, LoggedNoise, NoiseSource};
pub use train::{condition_stats, train, LogRow, TrainOptions, TrainOutcome};

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParameterSet};
use crate::egnn::{self, DynamicsConfig};
use crate::error::{EdmError, Result};
use crate::geometry;
use crate::molecule::Molecule;
use crate::schedule::NoiseSchedule;

/// Relative scaling between coordinates, one-hot atom types, and charges.
/// Features defined on a smaller scale than coordinates make the denoising
/// process fix rough positions first and decide atom types later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSpec {
    pub x: f64,
    pub onehot: f64,
    pub charge: f64,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec { x: 1.0, onehot: 0.25, charge: 0.1 }
    }
}

impl ScalingSpec {
    pub fn identity() -> Self {
        ScalingSpec { x: 1.0, onehot: 1.0, charge: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x > 0.0 && self.onehot > 0.0 && self.charge > 0.0 {
            Ok(())
        } else {
            Err(EdmError::Contract(format!("all scales must be positive, got {self:?}")))
        }
    }

    /// Smallest gap between adjacent discrete feature values in scaled
    /// units; the decoders need `sigma_0` well below this.
    pub fn min_scaled_gap(&self, include_charges: bool) -> f64 {
        if include_charges {
            self.onehot.min(self.charge)
        } else {
            self.onehot
        }
    }
}

/// Invariant feature width `F`: one-hot classes plus the optional charge
/// channel.
pub fn feature_dim(n_types: usize, include_charges: bool) -> usize {
    n_types + usize::from(include_charges)
}

/// Scaled representation `[x, b1 * onehot, b2 * charge]` as separate
/// positional (`M x 3`) and feature (`M x F`) blocks.
pub fn scale_features(mol: &Molecule, s: &ScalingSpec, include_charges: bool) -> (Vec<f64>, Vec<f64>) {
    let m = mol.size();
    let k = mol.n_types;
    let f = feature_dim(k, include_charges);
    let xs: Vec<f64> = mol.positions.iter().map(|&v| v * s.x).collect();
    let mut hs = vec![0.0; m * f];
    for i in 0..m {
        hs[i * f + mol.types[i]] = s.onehot;
        if include_charges {
            hs[i * f + k] = mol.charges[i] as f64 * s.charge;
        }
    }
    (xs, hs)
}

/// Invert [`scale_features`]: positions elementwise, types by argmax,
/// charges by rounding.
pub fn unscale_features(
    xs: &[f64],
    hs: &[f64],
    s: &ScalingSpec,
    n_types: usize,
    include_charges: bool,
) -> Molecule {
    let f = feature_dim(n_types, include_charges);
    let m = hs.len() / f;
    let positions: Vec<f64> = xs.iter().map(|&v| v / s.x).collect();
    let mut types = Vec::with_capacity(m);
    let mut charges = Vec::with_capacity(m);
    for i in 0..m {
        let row = &hs[i * f..i * f + n_types];
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        types.push(best);
        if include_charges {
            charges.push((hs[i * f + n_types] / s.charge).round() as i64);
        } else {
            charges.push(0);
        }
    }
    Molecule::new(positions, types, charges, n_types)
}

/// Paired latents: positional part on the zero-CoG subspace, feature part in
/// the ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub zx: Vec<f64>,
    pub zh: Vec<f64>,
    pub t: usize,
}

impl LatentState {
    pub fn m(&self) -> usize {
        self.zx.len() / 3
    }

    pub fn f(&self) -> usize {
        self.zh.len() / self.m()
    }
}

/// Loss weighting: `w(t) = 1` during training; the variational weight
/// magnitude `SNR(t-1)/SNR(t) - 1` when evaluating the probabilistic bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    Simplified,
    Variational,
}

/// How to decode `z_0` into a molecule: draw from the decoder distributions
/// or take their mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Sample,
    Mode,
}

/// Terms of the zeroth likelihood: continuous positions, categorical atom
/// types, integer charges. All log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L0Terms {
    pub x: f64,
    pub h_categorical: f64,
    pub h_integer: f64,
}

impl L0Terms {
    pub fn h(&self) -> f64 {
        self.h_categorical + self.h_integer
    }
}

/// One log-likelihood estimate with its breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllRecord {
    pub m: usize,
    /// `T * L_t` for the sampled step, a bound term (nonpositive in
    /// expectation).
    pub t_term: f64,
    pub l_base: f64,
    pub l0_x: f64,
    pub l0_h: f64,
    pub log_p_m: f64,
    /// `-(T*L_t + L_0 + L_base + log p(M))`.
    pub nll: f64,
}

/// Model bundle: dynamics parameters and configuration, noise schedule, and
/// feature scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct EdmModel {
    pub params: ParameterSet,
    pub dynamics: DynamicsConfig,
    pub schedule: NoiseSchedule,
    pub scaling: ScalingSpec,
    pub include_charges: bool,
}

impl EdmModel {
    pub fn feature_dim(&self) -> usize {
        self.dynamics.feature_dim
    }

    /// Sanity checks tying the pieces together.
    pub fn validate(&self) -> Result<()> {
        self.scaling.validate()?;
        let sigma0 = self.schedule.sigma(0);
        let gap = self.scaling.min_scaled_gap(self.include_charges);
        if sigma0 >= 0.1 * gap {
            eprintln!(
                "warning: sigma_0 = {sigma0:.4} is not small against the scaled feature gap {gap:.4}; \
                 discrete decoding may be unreliable"
            );
        }
        Ok(())
    }

    /// Noise a datapoint to step `t`: `z_t = alpha_t [x, h] + sigma_t eps`,
    /// with the positional noise drawn on the zero-CoG subspace. The
    /// molecule must already be centered.
    pub fn q_sample<S: NoiseSource>(
        &self,
        mol: &Molecule,
        t: usize,
        noise: &mut S,
    ) -> Result<(LatentState, JointNoise)> {
        geometry::check_zero_cog("q_sample", &mol.positions)?;
        let (xs, hs) = scale_features(mol, &self.scaling, self.include_charges);
        let eps = noise.draw(mol.size(), self.feature_dim());
        let a = self.schedule.alpha(t);
        let s = self.schedule.sigma(t);
        let zx = xs.iter().zip(&eps.eps_x).map(|(&x, &e)| a * x + s * e).collect();
        let zh = hs.iter().zip(&eps.eps_h).map(|(&h, &e)| a * h + s * e).collect();
        Ok((LatentState { zx, zh, t }, eps))
    }

    /// Noise-prediction nodes for a latent state, recorded on `g`.
    pub fn predict(
        &self,
        g: &mut Graph,
        z: &LatentState,
        condition: Option<f64>,
    ) -> Result<(NodeId, NodeId)> {
        egnn::predict(
            g,
            &self.params,
            &self.dynamics,
            &z.zx,
            &z.zh,
            z.t,
            self.schedule.t_max(),
            condition,
        )
    }

    /// Noise prediction without keeping the graph.
    pub fn predict_values(&self, z: &LatentState, condition: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let (ex, eh) = self.predict(&mut g, z, condition)?;
        Ok((g.values(ex).to_vec(), g.values(eh).to_vec()))
    }

    /// Record the denoising loss `1/2 w(t) ||eps - eps_hat||^2` for one
    /// molecule at step `t`, summed jointly over positional and feature
    /// components.
    pub fn loss_node<S: NoiseSource>(
        &self,
        g: &mut Graph,
        mol: &Molecule,
        t: usize,
        weighting: LossWeighting,
        noise: &mut S,
        condition: Option<f64>,
    ) -> Result<NodeId> {
        let w = match weighting {
            LossWeighting::Simplified => 1.0,
            LossWeighting::Variational => {
                assert!(t >= 1, "variational weighting handles t = 0 separately");
                self.schedule.snr_ratio_minus_one(t)
            }
        };
        debug_assert!(w >= 0.0);
        let (z, eps) = self.q_sample(mol, t, noise)?;
        let (ex, eh) = self.predict(g, &z, condition)?;
        let m = mol.size();
        let tx = g.constant(m, 3, eps.eps_x);
        let th = g.constant(m, self.feature_dim(), eps.eps_h);
        let dx = g.sub(ex, tx);
        let dh = g.sub(eh, th);
        let sx = g.square(dx);
        let sh = g.square(dh);
        let nx = g.sum_all(sx);
        let nh = g.sum_all(sh);
        let total = g.add(nx, nh);
        Ok(g.scale(total, 0.5 * w))
    }

    /// Ancestral sampling from `z_T` down to `z_0`. Every step draws fresh
    /// joint noise with a zero-CoG positional part, so each latent stays on
    /// the subspace. `on_step` observes every latent including `z_T`.
    pub fn sample_chain<S: NoiseSource>(
        &self,
        m: usize,
        noise: &mut S,
        condition: Option<f64>,
        mut on_step: impl FnMut(&LatentState),
    ) -> Result<LatentState> {
        assert!(m >= 1, "cannot sample an empty molecule");
        let f = self.feature_dim();
        let t_max = self.schedule.t_max();
        let init = noise.draw(m, f);
        let mut z = LatentState { zx: init.eps_x, zh: init.eps_h, t: t_max };
        on_step(&z);
        for t in (1..=t_max).rev() {
            let s = t - 1;
            let (ex, eh) = self.predict_values(&z, condition)?;
            let (alpha_ts, sigma_ts2) = self.schedule.transition(t, s);
            let sigma_t = self.schedule.sigma(t);
            let sigma_post = sigma_ts2.sqrt() * self.schedule.sigma(s) / sigma_t;
            let c_eps = sigma_ts2 / (alpha_ts * sigma_t);
            let eps = noise.draw(m, f);
            for i in 0..m * 3 {
                z.zx[i] = z.zx[i] / alpha_ts - c_eps * ex[i] + sigma_post * eps.eps_x[i];
            }
            for i in 0..m * f {
                z.zh[i] = z.zh[i] / alpha_ts - c_eps * eh[i] + sigma_post * eps.eps_h[i];
            }
            // Every term lies in the subspace, so this only removes
            // accumulated rounding drift (amplified by the 1/alpha factors).
            geometry::remove_cog_in_place(&mut z.zx);
            z.t = s;
            on_step(&z);
        }
        Ok(z)
    }

    /// Per-class decoder probabilities for one atom row of `z_0^(h)`:
    /// proportional to the normal mass on `[1 - 1/2, 1 + 1/2]` around each
    /// unscaled class channel, normalized to sum to one.
    pub fn class_probabilities(&self, zh_row: &[f64], n_types: usize) -> Vec<f64> {
        let sigma_u = self.schedule.sigma(0) / self.scaling.onehot;
        let mut q: Vec<f64> = (0..n_types)
            .map(|k| {
                let u = zh_row[k] / self.scaling.onehot;
                (normal_cdf((1.5 - u) / sigma_u) - normal_cdf((0.5 - u) / sigma_u)).max(1e-300)
            })
            .collect();
        let total: f64 = q.iter().sum();
        for v in &mut q {
            *v /= total;
        }
        q
    }

    /// Integer log-likelihood of charge `c` under the discretized Gaussian
    /// on the unscaled charge channel.
    pub fn charge_log_prob(&self, zh_charge: f64, c: i64) -> f64 {
        let sigma_u = self.schedule.sigma(0) / self.scaling.charge;
        let u = zh_charge / self.scaling.charge;
        let p = normal_cdf((c as f64 + 0.5 - u) / sigma_u) - normal_cdf((c as f64 - 0.5 - u) / sigma_u);
        p.max(1e-300).ln()
    }

    /// Decode `z_0` into a molecule.
    ///
    /// Positions come from the subspace Gaussian
    /// `N(x | z_0^(x)/alpha_0 - sigma_0/alpha_0 * eps_hat, sigma_0^2/alpha_0^2)`;
    /// atom types from the categorical over truncated-Gaussian masses;
    /// charges from the discretized Gaussian (or its mode).
    pub fn decode_z0<R: Rng>(
        &self,
        z0: &LatentState,
        condition: Option<f64>,
        rng: &mut R,
        mode: DecodeMode,
    ) -> Result<Molecule> {
        assert_eq!(z0.t, 0, "decode_z0 expects a latent at t = 0");
        let m = z0.m();
        let f = self.feature_dim();
        let include_charges = self.include_charges;
        let n_types = f - usize::from(include_charges);
        let (eps_x_hat, _) = self.predict_values(z0, condition)?;
        let a0 = self.schedule.alpha(0);
        let s0 = self.schedule.sigma(0);
        let ratio = s0 / a0;
        let mut xs: Vec<f64> =
            z0.zx.iter().zip(&eps_x_hat).map(|(&z, &e)| z / a0 - ratio * e).collect();
        if mode == DecodeMode::Sample {
            let noise = geometry::sample_subspace_noise(m, rng);
            for (x, n) in xs.iter_mut().zip(&noise) {
                *x += ratio * n;
            }
        }
        let positions: Vec<f64> = xs.iter().map(|&v| v / self.scaling.x).collect();

        let mut types = Vec::with_capacity(m);
        let mut charges = Vec::with_capacity(m);
        for i in 0..m {
            let row = &z0.zh[i * f..(i + 1) * f];
            let p = self.class_probabilities(row, n_types);
            let k = match mode {
                DecodeMode::Mode => argmax(&p),
                DecodeMode::Sample => sample_categorical(&p, rng),
            };
            types.push(k);
            if include_charges {
                let u = row[n_types] / self.scaling.charge;
                let c = match mode {
                    DecodeMode::Mode => u.round() as i64,
                    DecodeMode::Sample => self.sample_integer(u, rng),
                };
                charges.push(c);
            } else {
                charges.push(0);
            }
        }
        Ok(Molecule::new(positions, types, charges, n_types))
    }

    fn sample_integer<R: Rng>(&self, u: f64, rng: &mut R) -> i64 {
        let sigma_u = self.schedule.sigma(0) / self.scaling.charge;
        let center = u.round() as i64;
        let half_width = (8.0 * sigma_u).ceil() as i64 + 1;
        let lo = center - half_width;
        let hi = center + half_width;
        let probs: Vec<f64> = (lo..=hi)
            .map(|c| {
                (normal_cdf((c as f64 + 0.5 - u) / sigma_u) - normal_cdf((c as f64 - 0.5 - u) / sigma_u))
                    .max(0.0)
            })
            .collect();
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return center;
        }
        let mut r = rng.gen::<f64>() * total;
        for (i, &p) in probs.iter().enumerate() {
            r -= p;
            if r <= 0.0 {
                return lo + i as i64;
            }
        }
        hi
    }

    /// Draw a full molecule: ancestral chain then decoding.
    pub fn sample_molecule<S: NoiseSource, R: Rng>(
        &self,
        m: usize,
        chain_noise: &mut S,
        decode_rng: &mut R,
        condition: Option<f64>,
        mode: DecodeMode,
    ) -> Result<Molecule> {
        let z0 = self.sample_chain(m, chain_noise, condition, |_| {})?;
        self.decode_z0(&z0, condition, decode_rng, mode)
    }

    /// Zeroth likelihood terms for a molecule and a latent `z_0` drawn from
    /// `q(z_0 | x, h)`.
    pub fn loglik_l0(&self, mol: &Molecule, z0: &LatentState, condition: Option<f64>) -> Result<L0Terms> {
        assert_eq!(z0.t, 0, "loglik_l0 expects a latent at t = 0");
        let m = mol.size();
        let f = self.feature_dim();
        let n_types = mol.n_types;
        let (xs, _) = scale_features(mol, &self.scaling, self.include_charges);
        let a0 = self.schedule.alpha(0);
        let s0 = self.schedule.sigma(0);
        let eps_x: Vec<f64> = z0.zx.iter().zip(&xs).map(|(&z, &x)| (z - a0 * x) / s0).collect();
        let (eps_x_hat, _) = self.predict_values(z0, condition)?;
        let sq: f64 = eps_x.iter().zip(&eps_x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = ((m - 1) * 3) as f64;
        let log_z = d * ((2.0 * std::f64::consts::PI).sqrt() * s0 / a0).ln();
        // Scaling x is a continuous change of variables; its log-det enters
        // the likelihood (no correction needed for the discrete features).
        let x_scale_correction = d * self.scaling.x.ln();
        let l0_x = -log_z - 0.5 * sq + x_scale_correction;

        let mut l_cat = 0.0;
        let mut l_int = 0.0;
        for i in 0..m {
            let row = &z0.zh[i * f..(i + 1) * f];
            let p = self.class_probabilities(row, n_types);
            l_cat += p[mol.types[i]].ln();
            if self.include_charges {
                l_int += self.charge_log_prob(row[n_types], mol.charges[i]);
            }
        }
        Ok(L0Terms { x: l0_x, h_categorical: l_cat, h_integer: l_int })
    }

    /// One draw of the unbiased log-likelihood estimator: a uniformly
    /// sampled denoising step scaled by `T`, a dedicated reconstruction
    /// pass, and the closed-form prior term.
    pub fn nll_estimate<R: Rng>(
        &self,
        mol: &Molecule,
        sizes: &SizeDistribution,
        condition: Option<f64>,
        rng: &mut R,
    ) -> Result<NllRecord> {
        let t = rng.gen_range(1..=self.schedule.t_max());
        self.nll_estimate_at(mol, sizes, condition, t, rng)
    }

    /// The estimator with the denoising step pinned to `t`; averaging
    /// `T * L_t` over `t = 1..=T` recovers the exhaustive bound.
    pub fn nll_estimate_at<S: NoiseSource>(
        &self,
        mol: &Molecule,
        sizes: &SizeDistribution,
        condition: Option<f64>,
        t: usize,
        noise: &mut S,
    ) -> Result<NllRecord> {
        let t_max = self.schedule.t_max();
        let m = mol.size();
        let f = self.feature_dim();

        let (z_t, eps_t) = self.q_sample(mol, t, noise)?;
        let (ex, eh) = self.predict_values(&z_t, condition)?;
        let mut sq: f64 = eps_t.eps_x.iter().zip(&ex).map(|(a, b)| (a - b) * (a - b)).sum();
        sq += eps_t.eps_h.iter().zip(&eh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let l_t = -0.5 * self.schedule.snr_ratio_minus_one(t) * sq;
        let t_term = t_max as f64 * l_t;

        let (z0, _) = self.q_sample(mol, 0, noise)?;
        let l0 = self.loglik_l0(mol, &z0, condition)?;

        let (xs, hs) = scale_features(mol, &self.scaling, self.include_charges);
        let a_t = self.schedule.alpha(t_max);
        let s_t = self.schedule.sigma(t_max);
        let mu_x: Vec<f64> = xs.iter().map(|&v| a_t * v).collect();
        let zeros_x = vec![0.0; mu_x.len()];
        let kl_x = if m > 1 {
            geometry::kl_isotropic(&mu_x, s_t, &zeros_x, 1.0, (m - 1) * 3)?
        } else {
            0.0
        };
        let mu_h: Vec<f64> = hs.iter().map(|&v| a_t * v).collect();
        let zeros_h = vec![0.0; mu_h.len()];
        let kl_h = geometry::kl_isotropic(&mu_h, s_t, &zeros_h, 1.0, m * f)?;
        let l_base = -(kl_x + kl_h);

        let log_p_m = sizes.log_prob(m);
        let nll = -(t_term + l0.x + l0.h() + l_base + log_p_m);
        Ok(NllRecord { m, t_term, l_base, l0_x: l0.x, l0_h: l0.h(), log_p_m, nll })
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).map(|(i, _)| i).unwrap()
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut r = rng.gen::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        r -= pi;
        if r <= 0.0 {
            return i;
        }
    }
    p.len() - 1
}
