use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataio;
use crate::egnn::{self, DynamicsConfig};
use crate::geometry;
use crate::molecule::Molecule;
use crate::schedule::NoiseSchedule;

use super::*;

/// Replays prerecorded joint noise draws.
struct ReplayNoise {
    draws: Vec<JointNoise>,
    cursor: usize,
}

impl ReplayNoise {
    fn new(draws: Vec<JointNoise>) -> Self {
        ReplayNoise { draws, cursor: 0 }
    }
}

impl NoiseSource for ReplayNoise {
    fn draw(&mut self, m: usize, f: usize) -> JointNoise {
        let eps = self.draws[self.cursor].clone();
        self.cursor += 1;
        assert_eq!(eps.eps_x.len(), m * 3);
        assert_eq!(eps.eps_h.len(), m * f);
        eps
    }
}

/// Rotates the positional part of every draw; the feature part passes
/// through.
struct RotatedNoise<S> {
    inner: S,
    rot: [[f64; 3]; 3],
}

impl<S: NoiseSource> NoiseSource for RotatedNoise<S> {
    fn draw(&mut self, m: usize, f: usize) -> JointNoise {
        let eps = self.inner.draw(m, f);
        JointNoise { eps_x: geometry::apply_orthogonal(&self.rot, &eps.eps_x), eps_h: eps.eps_h }
    }
}

fn toy_molecule() -> Molecule {
    dataio::toy_template()
}

fn test_model(t_max: usize, seed: u64, randomize_phi_x: bool) -> EdmModel {
    test_model_amp(t_max, seed, if randomize_phi_x { 0.3 } else { 0.0 })
}

/// `phi_x_amp` randomizes the zero-initialized coordinate layers with the
/// given amplitude; 0.0 keeps them zero (null positional dynamics).
fn test_model_amp(t_max: usize, seed: u64, phi_x_amp: f64) -> EdmModel {
    let dynamics = DynamicsConfig {
        n_layers: 2,
        nf: 8,
        feature_dim: feature_dim(2, true),
        conditioning_dim: 0,
        equivariant: true,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = egnn::init_params(&dynamics, &mut rng);
    if phi_x_amp > 0.0 {
        for (_, tensor) in params.iter_mut() {
            for v in &mut tensor.values {
                if *v == 0.0 {
                    *v = rng.gen_range(-phi_x_amp..phi_x_amp);
                }
            }
        }
    }
    EdmModel {
        params,
        dynamics,
        schedule: NoiseSchedule::polynomial(t_max, 1e-5).unwrap(),
        scaling: ScalingSpec::default(),
        include_charges: true,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ── Scaling ─────────────────────────────────────────────────────────────

#[test]
fn identity_scaling_reproduces_raw_features() {
    let mol = toy_molecule();
    let (xs, hs) = scale_features(&mol, &ScalingSpec::identity(), true);
    assert_eq!(xs, mol.positions);
    let f = feature_dim(2, true);
    for i in 0..mol.size() {
        let row = &hs[i * f..(i + 1) * f];
        assert_eq!(row[mol.types[i]], 1.0);
        assert_eq!(row[2], mol.charges[i] as f64);
    }
}

#[test]
fn default_scaling_values() {
    let mol = toy_molecule();
    let (_, hs) = scale_features(&mol, &ScalingSpec::default(), true);
    let f = feature_dim(2, true);
    // One-hot entry 1 becomes 0.25; charge 8 becomes 0.8.
    assert_eq!(hs[mol.types[0]], 0.25);
    assert!((hs[2 * f + 2] - 0.8).abs() < 1e-15);
}

#[test]
fn scale_unscale_roundtrip() {
    let mol = toy_molecule();
    let s = ScalingSpec { x: 3.0, onehot: 0.25, charge: 0.1 };
    let (xs, hs) = scale_features(&mol, &s, true);
    let back = unscale_features(&xs, &hs, &s, mol.n_types, true);
    assert!(max_abs_diff(&back.positions, &mol.positions) < 1e-12);
    assert_eq!(back.types, mol.types);
    assert_eq!(back.charges, mol.charges);
}

// ── q_sample ────────────────────────────────────────────────────────────

#[test]
fn q_sample_keeps_positions_on_the_subspace() {
    let model = test_model(50, 1, true);
    let mol = toy_molecule();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for t in [0usize, 7, 25, 50] {
        let (z, _) = model.q_sample(&mol, t, &mut rng).unwrap();
        assert!(geometry::max_abs_cog(&z.zx) < 1e-10);
    }
}

#[test]
fn q_sample_rejects_uncentered_molecules() {
    let model = test_model(50, 1, true);
    let mut mol = toy_molecule();
    mol.positions[0] += 5.0;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    assert!(model.q_sample(&mol, 3, &mut rng).is_err());
}

#[test]
fn q_sample_moments_match_monte_carlo() {
    let model = test_model(50, 1, true);
    let mol = toy_molecule();
    let t = 20;
    let n = 100_000;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (xs, hs) = scale_features(&mol, &model.scaling, true);
    let a = model.schedule.alpha(t);
    let s = model.schedule.sigma(t);
    let mut zx0 = Vec::with_capacity(n);
    let mut zh0 = Vec::with_capacity(n);
    for _ in 0..n {
        let (z, _) = model.q_sample(&mol, t, &mut rng).unwrap();
        zx0.push(z.zx[0]);
        zh0.push(z.zh[0]);
    }
    let check = |samples: &[f64], mean_want: f64, var_want: f64| {
        let nf = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        let mean_se = (var / nf).sqrt();
        let var_se = var_want * (2.0 / (nf - 1.0)).sqrt();
        assert!((mean - mean_want).abs() < 3.0 * mean_se, "mean {mean} vs {mean_want}");
        assert!((var - var_want).abs() < 3.0 * var_se, "var {var} vs {var_want}");
    };
    // Feature coordinates carry the full sigma_t^2; subspace coordinates
    // lose 1/M of it to centering.
    check(&zh0, a * hs[0], s * s);
    let m = mol.size() as f64;
    check(&zx0, a * xs[0], s * s * (1.0 - 1.0 / m));
}

// ── Loss ────────────────────────────────────────────────────────────────

#[test]
fn loss_node_matches_manual_value_and_weighting() {
    let model = test_model(50, 5, true);
    let mol = toy_molecule();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let eps = NoiseSource::draw(&mut rng, mol.size(), model.feature_dim());

    for (weighting, t) in [(LossWeighting::Simplified, 0), (LossWeighting::Simplified, 31), (LossWeighting::Variational, 31)] {
        let mut replay = ReplayNoise::new(vec![eps.clone()]);
        let (z, _) = model.q_sample(&mol, t, &mut replay).unwrap();
        let (ex, eh) = model.predict_values(&z, None).unwrap();
        let w = match weighting {
            LossWeighting::Simplified => 1.0,
            LossWeighting::Variational => model.schedule.snr_ratio_minus_one(t),
        };
        let manual = 0.5
            * w
            * (eps.eps_x.iter().zip(&ex).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                + eps.eps_h.iter().zip(&eh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());

        let mut g = crate::autodiff::Graph::new();
        let mut replay = ReplayNoise::new(vec![eps.clone()]);
        let node = model.loss_node(&mut g, &mol, t, weighting, &mut replay, None).unwrap();
        let got = g.scalar(node);
        assert!((got - manual).abs() < 1e-12 * manual.abs().max(1.0));
        assert!(got >= 0.0);
    }
}

#[test]
fn joint_squared_error_decomposes_into_parts() {
    // The concatenated squared distance equals the positional part plus the
    // feature part.
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let a_x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a_h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let part = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let cat_a: Vec<f64> = a_x.iter().chain(&a_h).copied().collect();
    let cat_b: Vec<f64> = b_x.iter().chain(&b_h).copied().collect();
    let joint = part(&cat_a, &cat_b);
    assert!((joint - (part(&a_x, &b_x) + part(&a_h, &b_h))).abs() < 1e-12);
}

#[test]
fn equivariant_loss_is_rotation_invariant_with_paired_noise() {
    let model = test_model(50, 13, true);
    let mol = toy_molecule();
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let q = geometry::random_orthogonal(&mut rng, true);
    let rotated = Molecule::new(
        geometry::apply_orthogonal(&q, &mol.positions),
        mol.types.clone(),
        mol.charges.clone(),
        mol.n_types,
    );
    for t in [0usize, 17, 50] {
        let mut g1 = crate::autodiff::Graph::new();
        let mut base_noise = ChaCha20Rng::seed_from_u64(77);
        let l1 = model.loss_node(&mut g1, &mol, t, LossWeighting::Simplified, &mut base_noise, None).unwrap();
        let mut g2 = crate::autodiff::Graph::new();
        let mut rot_noise =
            RotatedNoise { inner: ChaCha20Rng::seed_from_u64(77), rot: q };
        let l2 = model
            .loss_node(&mut g2, &rotated, t, LossWeighting::Simplified, &mut rot_noise, None)
            .unwrap();
        let (a, b) = (g1.scalar(l1), g2.scalar(l2));
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "t={t}: {a} vs {b}");
    }
}

// ── Sampling ────────────────────────────────────────────────────────────

#[test]
fn chain_latents_stay_on_the_subspace() {
    let model = test_model_amp(60, 17, 0.01);
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    let mut worst: f64 = 0.0;
    let mut steps = 0usize;
    model
        .sample_chain(4, &mut rng, None, |z| {
            worst = worst.max(geometry::max_abs_cog(&z.zx));
            steps += 1;
        })
        .unwrap();
    assert_eq!(steps, 61, "observer sees z_T and every later latent");
    assert!(worst < 1e-8, "max CoG drift {worst}");
}

#[test]
fn chain_variance_matches_scalar_recursion_with_null_dynamics() {
    // Freshly initialized parameters predict exactly zero positional noise,
    // so the x-chain is the pure noise recursion. Its per-coordinate
    // variance follows v_s = v_t / alpha_{t|s}^2 + sigma_post^2 on the
    // subspace, scaled by (1 - 1/M) per ambient coordinate.
    let t_max = 10;
    let model = {
        let dynamics = DynamicsConfig {
            n_layers: 1,
            nf: 4,
            feature_dim: feature_dim(2, true),
            conditioning_dim: 0,
            equivariant: true,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        EdmModel {
            params: egnn::init_params(&dynamics, &mut rng),
            dynamics,
            schedule: NoiseSchedule::polynomial(t_max, 1e-5).unwrap(),
            scaling: ScalingSpec::default(),
            include_charges: true,
        }
    };
    let mut v = 1.0f64;
    for t in (1..=t_max).rev() {
        let s = t - 1;
        let (a_ts, var_ts) = model.schedule.transition(t, s);
        let sigma_post = var_ts.sqrt() * model.schedule.sigma(s) / model.schedule.sigma(t);
        v = v / (a_ts * a_ts) + sigma_post * sigma_post;
    }
    let m = 3usize;
    let expected = v * (1.0 - 1.0 / m as f64);
    let n = 10_000;
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let z0 = model.sample_chain(m, &mut rng, None, |_| {}).unwrap();
        samples.push(z0.zx[0]);
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let se = expected * (2.0 / (nf - 1.0)).sqrt();
    assert!(
        (var - expected).abs() < 3.0 * se,
        "chain variance {var} vs recursion {expected} (3 SE = {})",
        3.0 * se
    );
}

#[test]
fn rotating_all_noise_rotates_the_chain_exactly() {
    let model = test_model_amp(40, 25, 0.01);
    let mut rng = ChaCha20Rng::seed_from_u64(27);
    let q = geometry::random_orthogonal(&mut rng, true);
    let z_base = model.sample_chain(4, &mut ChaCha20Rng::seed_from_u64(99), None, |_| {}).unwrap();
    let mut rotated_noise = RotatedNoise { inner: ChaCha20Rng::seed_from_u64(99), rot: q };
    let z_rot = model.sample_chain(4, &mut rotated_noise, None, |_| {}).unwrap();
    let expected = geometry::apply_orthogonal(&q, &z_base.zx);
    assert!(max_abs_diff(&z_rot.zx, &expected) < 1e-8);
    assert!(max_abs_diff(&z_rot.zh, &z_base.zh) < 1e-8);
}

// ── Decoding and the zeroth likelihood ──────────────────────────────────

/// Schedule whose sigma_0 is close to 0.02 in scaled units.
fn sharp_model(seed: u64) -> EdmModel {
    let dynamics = DynamicsConfig {
        n_layers: 1,
        nf: 4,
        feature_dim: feature_dim(2, true),
        conditioning_dim: 0,
        equivariant: true,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    EdmModel {
        params: egnn::init_params(&dynamics, &mut rng),
        dynamics,
        schedule: NoiseSchedule::polynomial(100, 2e-4).unwrap(),
        scaling: ScalingSpec::default(),
        include_charges: true,
    }
}

#[test]
fn clean_latent_decodes_to_the_right_atom_types() {
    let model = sharp_model(29);
    let sigma0 = model.schedule.sigma(0);
    assert!(sigma0 <= 0.02, "sigma_0 = {sigma0}");
    let mol = toy_molecule();
    let (xs, hs) = scale_features(&mol, &model.scaling, true);
    let a0 = model.schedule.alpha(0);
    let z0 = LatentState {
        zx: xs.iter().map(|&v| a0 * v).collect(),
        zh: hs.iter().map(|&v| a0 * v).collect(),
        t: 0,
    };
    let f = model.feature_dim();
    for i in 0..mol.size() {
        let p = model.class_probabilities(&z0.zh[i * f..(i + 1) * f], mol.n_types);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "probabilities normalize");
        assert!(p[mol.types[i]] > 0.999, "class probability {}", p[mol.types[i]]);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let decoded = model.decode_z0(&z0, None, &mut rng, DecodeMode::Mode).unwrap();
    assert_eq!(decoded.types, mol.types);
    assert_eq!(decoded.charges, mol.charges);
    // Fresh init predicts zero positional noise, so the mode is exactly
    // z_0^(x) / alpha_0.
    let expected: Vec<f64> = z0.zx.iter().map(|&v| v / a0 / model.scaling.x).collect();
    assert!(max_abs_diff(&decoded.positions, &expected) < 1e-15);
}

#[test]
fn integer_log_prob_is_zero_on_clean_inputs() {
    // sigma_0 = 1e-3 puts the +-1/2 integration window at 50 sigma in
    // charge units (sigma_0 / 0.1 = 0.01).
    let model = very_sharp_model(33);
    let lp = model.charge_log_prob(0.6, 6);
    assert!(lp.abs() < 1e-9, "log prob {lp}");
}

/// Schedule with sigma_0 = 1e-3.
fn very_sharp_model(seed: u64) -> EdmModel {
    let dynamics = DynamicsConfig {
        n_layers: 1,
        nf: 4,
        feature_dim: feature_dim(2, true),
        conditioning_dim: 0,
        equivariant: true,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    EdmModel {
        params: egnn::init_params(&dynamics, &mut rng),
        dynamics,
        schedule: NoiseSchedule::polynomial(100, 5e-7).unwrap(),
        scaling: ScalingSpec::default(),
        include_charges: true,
    }
}

#[test]
fn l0_terms_match_the_closed_form() {
    // With exact inputs (z_0 = alpha_0 * scaled data) the injected noise is
    // zero and the fresh-initialized network predicts zero, so the
    // positional term is exactly the log-normalizer.
    let model = very_sharp_model(35);
    let mol = toy_molecule();
    let (xs, hs) = scale_features(&mol, &model.scaling, true);
    let a0 = model.schedule.alpha(0);
    let z0 = LatentState {
        zx: xs.iter().map(|&v| a0 * v).collect(),
        zh: hs.iter().map(|&v| a0 * v).collect(),
        t: 0,
    };
    let l0 = model.loglik_l0(&mol, &z0, None).unwrap();
    let d = ((mol.size() - 1) * 3) as f64;
    let expected = -d * ((2.0 * std::f64::consts::PI).sqrt() * model.schedule.sigma(0) / a0).ln();
    assert!((l0.x - expected).abs() < 1e-10, "{} vs {expected}", l0.x);
    assert!(l0.h_categorical.abs() < 1e-6);
    assert!(l0.h_integer.abs() < 1e-6);
}

#[test]
fn l0_normalizer_reference_value() {
    // -(M-1)*3*ln(sqrt(2 pi) * 0.01) for M = 2, 30-digit reference.
    let d = 3.0;
    let v = -d * ((2.0 * std::f64::consts::PI).sqrt() * 0.01).ln();
    assert!((v - 11.0586949583502558787669595189).abs() < 1e-12);
}

// ── Log-likelihood estimator ────────────────────────────────────────────

#[test]
fn prior_term_vanishes_when_alpha_final_is_small() {
    let model = test_model(1000, 37, true);
    let mol = toy_molecule();
    let sizes = SizeDistribution::fit(std::slice::from_ref(&mol)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(39);
    let rec = model.nll_estimate(&mol, &sizes, None, &mut rng).unwrap();
    assert!(rec.l_base.abs() < 1e-4, "L_base = {}", rec.l_base);
    assert!(rec.nll.is_finite());
    // Single-size support contributes log p(M) = 0.
    assert_eq!(rec.log_p_m, 0.0);
}

#[test]
fn estimator_is_exactly_invariant_under_paired_rotation() {
    let model = test_model(30, 41, true);
    let mol = toy_molecule();
    let sizes = SizeDistribution::fit(std::slice::from_ref(&mol)).unwrap();
    let mut qrng = ChaCha20Rng::seed_from_u64(43);
    let q = geometry::random_orthogonal(&mut qrng, true);
    let rotated = Molecule::new(
        geometry::apply_orthogonal(&q, &mol.positions),
        mol.types.clone(),
        mol.charges.clone(),
        mol.n_types,
    );
    for t in [1usize, 13, 30] {
        let mut base_noise = ChaCha20Rng::seed_from_u64(123);
        let a = model.nll_estimate_at(&mol, &sizes, None, t, &mut base_noise).unwrap();
        let mut rot_noise = RotatedNoise { inner: ChaCha20Rng::seed_from_u64(123), rot: q };
        let b = model.nll_estimate_at(&rotated, &sizes, None, t, &mut rot_noise).unwrap();
        assert!((a.nll - b.nll).abs() < 1e-8 * a.nll.abs().max(1.0), "t={t}: {} vs {}", a.nll, b.nll);
    }
}

#[test]
fn missing_size_support_yields_infinite_nll() {
    let model = test_model(30, 45, true);
    let mol = toy_molecule();
    let bigger = Molecule::new(vec![0.0; 12], vec![0, 0, 1, 1], vec![1, 1, 8, 8], 2);
    let sizes = SizeDistribution::fit(std::slice::from_ref(&bigger)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(47);
    let rec = model.nll_estimate(&mol, &sizes, None, &mut rng).unwrap();
    assert_eq!(rec.log_p_m, f64::NEG_INFINITY);
    assert_eq!(rec.nll, f64::INFINITY);
}

// ── Size and condition distributions ────────────────────────────────────

#[test]
fn size_distribution_fits_frequencies() {
    let m3 = toy_molecule();
    let m4 = Molecule::new(vec![0.0; 12], vec![0, 0, 1, 1], vec![1, 1, 8, 8], 2);
    let mols = vec![m3.clone(), m3.clone(), m4];
    let dist = SizeDistribution::fit(&mols).unwrap();
    assert_eq!(dist.sizes(), &[3, 4]);
    assert!((dist.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((dist.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(dist.log_prob(5), f64::NEG_INFINITY);
    assert!(SizeDistribution::fit(&[]).is_err());
}

#[test]
fn size_sampling_matches_frequencies_chi_squared() {
    let m3 = toy_molecule();
    let m4 = Molecule::new(vec![0.0; 12], vec![0, 0, 1, 1], vec![1, 1, 8, 8], 2);
    let mols = vec![m3.clone(), m3.clone(), m3, m4];
    let dist = SizeDistribution::fit(&mols).unwrap();
    let n = 100_000usize;
    let mut rng = ChaCha20Rng::seed_from_u64(49);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        *counts.entry(dist.sample(&mut rng)).or_insert(0usize) += 1;
    }
    let mut chi2 = 0.0;
    for (s, p) in dist.sizes().iter().zip(dist.probs()) {
        let expected = p * n as f64;
        let observed = counts[s] as f64;
        chi2 += (observed - expected) * (observed - expected) / expected;
    }
    // One degree of freedom; chi2 above 15 is a ~1e-4 event.
    assert!(chi2 < 15.0, "chi2 = {chi2}");
}

#[test]
fn condition_distribution_single_molecule_and_marginal() {
    let m3 = toy_molecule();
    let dist = ConditionDistribution::fit(std::slice::from_ref(&m3), &[5.0], 4).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(51);
    let (c, m) = dist.sample(&mut rng);
    assert_eq!(m, 3);
    assert!((c - 5.0).abs() < 1e-6, "bin center {c} stays at the single value");

    let m4 = Molecule::new(vec![0.0; 12], vec![0, 0, 1, 1], vec![1, 1, 8, 8], 2);
    let mols = vec![m3.clone(), m3.clone(), m4];
    let values = vec![1.0, 2.0, 9.0];
    let joint = ConditionDistribution::fit(&mols, &values, 4).unwrap();
    let marginal = joint.marginal_sizes();
    let plain = SizeDistribution::fit(&mols).unwrap();
    assert_eq!(marginal.sizes(), plain.sizes());
    for (a, b) in marginal.probs().iter().zip(plain.probs()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn condition_joint_sampling_matches_frequencies() {
    let m3 = toy_molecule();
    let m4 = Molecule::new(vec![0.0; 12], vec![0, 0, 1, 1], vec![1, 1, 8, 8], 2);
    let mols = vec![m3.clone(), m3.clone(), m4.clone(), m4];
    let values = vec![1.0, 1.2, 8.0, 8.4];
    let dist = ConditionDistribution::fit(&mols, &values, 3).unwrap();
    let n = 100_000usize;
    let mut rng = ChaCha20Rng::seed_from_u64(53);
    let mut seen = std::collections::BTreeMap::new();
    for _ in 0..n {
        let (c, m) = dist.sample(&mut rng);
        *seen.entry((format!("{c:.3}"), m)).or_insert(0usize) += 1;
    }
    for (_, &count) in seen.iter() {
        let p = count as f64 / n as f64;
        // Two cells each with probability 1/2; binomial 3 SE.
        let se = (0.5 * 0.5 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "cell probability {p}");
    }
    assert_eq!(seen.len(), 2);
    // Explicit conditioning picks sizes from the bin.
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    assert_eq!(dist.sample_size_given(1.1, &mut rng).unwrap(), 3);
    assert_eq!(dist.sample_size_given(8.2, &mut rng).unwrap(), 4);
    assert!(dist.sample_size_given(4.9, &mut rng).is_err(), "empty bin rejected");
}

// ── Training ────────────────────────────────────────────────────────────

#[test]
fn toy_training_reduces_the_loss() {
    let mut medians = Vec::new();
    for seed in 0..5u64 {
        let mut model = test_model(20, 100 + seed, false);
        let mut rng = ChaCha20Rng::seed_from_u64(200 + seed);
        let data = dataio::make_toy_rigid_dataset(64, &mut rng);
        let opts = TrainOptions {
            lr: 1e-3,
            batch_size: 16,
            epochs: 50,
            max_steps: Some(200),
            seed: 300 + seed,
            ..TrainOptions::default()
        };
        let outcome = train(&mut model, &data.molecules, None, None, &opts, |_, _, _, _| Ok(()))
            .unwrap();
        let first: f64 = outcome.log[..10].iter().map(|r| r.train_loss).sum::<f64>() / 10.0;
        let last: f64 =
            outcome.log[outcome.log.len() - 10..].iter().map(|r| r.train_loss).sum::<f64>() / 10.0;
        medians.push(last < first);
    }
    let improved = medians.iter().filter(|&&b| b).count();
    assert!(improved >= 3, "loss decreased in {improved}/5 seeds");
}

#[test]
fn training_is_deterministic_under_a_fixed_seed() {
    let run = || {
        let mut model = test_model(20, 7, false);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let data = dataio::make_toy_rigid_dataset(32, &mut rng);
        let opts = TrainOptions {
            lr: 1e-3,
            batch_size: 8,
            epochs: 2,
            seed: 9,
            ..TrainOptions::default()
        };
        let outcome =
            train(&mut model, &data.molecules, None, None, &opts, |_, _, _, _| Ok(())).unwrap();
        outcome.log.iter().map(|r| r.train_loss).collect::<Vec<f64>>()
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }
}

#[test]
fn nan_loss_aborts_with_diagnostic() {
    let mut model = test_model(20, 9, false);
    for (_, tensor) in model.params.iter_mut() {
        for v in &mut tensor.values {
            *v = f64::NAN;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let data = dataio::make_toy_rigid_dataset(8, &mut rng);
    let opts = TrainOptions { batch_size: 4, epochs: 1, seed: 11, ..TrainOptions::default() };
    let err = train(&mut model, &data.molecules, None, None, &opts, |_, _, _, _| Ok(())).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("step") && msg.contains("lr"), "diagnostic names step and lr: {msg}");
}

#[test]
fn conditional_prediction_consumes_the_condition() {
    let dynamics = DynamicsConfig {
        n_layers: 1,
        nf: 6,
        feature_dim: feature_dim(2, true),
        conditioning_dim: 1,
        equivariant: true,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(57);
    let mut params = egnn::init_params(&dynamics, &mut rng);
    for (_, tensor) in params.iter_mut() {
        for v in &mut tensor.values {
            if *v == 0.0 {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let model = EdmModel {
        params,
        dynamics,
        schedule: NoiseSchedule::polynomial(20, 1e-5).unwrap(),
        scaling: ScalingSpec::default(),
        include_charges: true,
    };
    let mol = toy_molecule();
    let (z, _) = model.q_sample(&mol, 5, &mut ChaCha20Rng::seed_from_u64(58)).unwrap();
    let (ex1, _) = model.predict_values(&z, Some(-0.5)).unwrap();
    let (ex2, _) = model.predict_values(&z, Some(1.5)).unwrap();
    assert!(max_abs_diff(&ex1, &ex2) > 1e-9, "condition value must reach the network");
}
