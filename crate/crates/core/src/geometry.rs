//! Zero-center-of-gravity subspace Gaussian: projection, sampling,
//! log-density, KL divergences, and random orthogonal matrices.
//!
//! Point sets are flat `M x 3` row-major buffers. A translation-invariant
//! density cannot exist on the full ambient space, so positional
//! distributions live on the linear subspace where coordinates sum to zero;
//! the effective dimension of that subspace is `(M - 1) * 3`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EdmError, Result};

/// Tolerance for accepting a point set as zero-CoG: `1e-9 * M` per axis.
/// Inputs failing it are rejected rather than silently projected.
pub const COG_TOLERANCE_PER_POINT: f64 = 1e-9;

/// Column mean of an `M x 3` buffer.
pub fn cog(coords: &[f64]) -> [f64; 3] {
    assert!(!coords.is_empty() && coords.len() % 3 == 0, "coords must be M x 3");
    let m = (coords.len() / 3) as f64;
    let mut c = [0.0; 3];
    for p in coords.chunks_exact(3) {
        c[0] += p[0];
        c[1] += p[1];
        c[2] += p[2];
    }
    [c[0] / m, c[1] / m, c[2] / m]
}

/// Largest per-axis |mean| of a point set.
pub fn max_abs_cog(coords: &[f64]) -> f64 {
    let c = cog(coords);
    c.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

pub fn check_zero_cog(context: &'static str, coords: &[f64]) -> Result<()> {
    let m = coords.len() / 3;
    let max_abs = max_abs_cog(coords);
    if max_abs < COG_TOLERANCE_PER_POINT * m as f64 {
        Ok(())
    } else {
        Err(EdmError::CogViolation { context, max_abs })
    }
}

/// Subtract the column mean: output satisfies `sum_i x_i = 0` per axis.
/// Idempotent.
pub fn remove_cog(coords: &[f64]) -> Vec<f64> {
    let mut out = coords.to_vec();
    remove_cog_in_place(&mut out);
    out
}

pub fn remove_cog_in_place(coords: &mut [f64]) {
    let c = cog(coords);
    for p in coords.chunks_exact_mut(3) {
        p[0] -= c[0];
        p[1] -= c[1];
        p[2] -= c[2];
    }
}

/// Draw from the isotropic standard normal restricted to the zero-CoG
/// subspace: sample in the `M * 3` ambient space and subtract the mean.
pub fn sample_subspace_noise<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    assert!(m >= 1, "need at least one point");
    let mut out: Vec<f64> = (0..m * 3).map(|_| rng.sample(StandardNormal)).collect();
    remove_cog_in_place(&mut out);
    out
}

/// Log-density of the zero-CoG normal:
/// `-(M-1)*3*ln(sqrt(2 pi) sigma) - ||x - mu||^2 / (2 sigma^2)`.
///
/// Both `x` and `mu` must lie in the subspace; the squared distance may then
/// be computed in ambient coordinates.
pub fn subspace_gaussian_logpdf(x: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    assert_eq!(x.len(), mu.len(), "x and mu must have the same size");
    assert!(sigma > 0.0, "sigma must be positive");
    check_zero_cog("subspace_gaussian_logpdf x", x)?;
    check_zero_cog("subspace_gaussian_logpdf mu", mu)?;
    let m = x.len() / 3;
    let d = ((m - 1) * 3) as f64;
    let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-d * ((2.0 * std::f64::consts::PI).sqrt() * sigma).ln() - sq / (2.0 * sigma * sigma))
}

/// KL divergence between two isotropic normals with equal stdev:
/// `||mu1 - mu2||^2 / (2 sigma^2)`.
///
/// Valid on the zero-CoG subspace and for concatenated position/feature
/// means: products of independent distributions sum in their KL terms, and
/// the concatenated squared distance is the sum of the parts.
pub fn kl_equal_sigma(mu1: &[f64], mu2: &[f64], sigma: f64) -> f64 {
    assert_eq!(mu1.len(), mu2.len(), "means must have the same size");
    assert!(sigma > 0.0, "sigma must be positive");
    let sq: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    sq / (2.0 * sigma * sigma)
}

/// KL divergence between isotropic normals with distinct stdevs:
/// `d ln(s2/s1) + (d s1^2 + ||mu1 - mu2||^2) / (2 s2^2) - d/2`.
///
/// `d` is the effective dimension: `(M-1)*3` for subspace positional parts,
/// `M*F` for feature parts. With unequal variances the divergence depends on
/// the subspace dimension, not the ambient one.
pub fn kl_isotropic(mu1: &[f64], sigma1: f64, mu2: &[f64], sigma2: f64, d: usize) -> Result<f64> {
    assert_eq!(mu1.len(), mu2.len(), "means must have the same size");
    assert!(sigma1 > 0.0 && sigma2 > 0.0, "sigmas must be positive");
    if d == 0 {
        return Err(EdmError::EmptyInput("kl_isotropic: dimension d must be positive".into()));
    }
    let d = d as f64;
    let sq: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(d * (sigma2 / sigma1).ln() + (d * sigma1 * sigma1 + sq) / (2.0 * sigma2 * sigma2) - d / 2.0)
}

/// Random 3x3 orthogonal matrix by Gram-Schmidt of a Gaussian matrix.
///
/// With `allow_reflection` the determinant is -1 with probability 1/2,
/// otherwise it is forced to +1 (a proper rotation).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, allow_reflection: bool) -> [[f64; 3]; 3] {
    // Columns of q are the orthonormalized columns of a Gaussian matrix.
    loop {
        let a: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
        let mut cols = [[0.0f64; 3]; 3];
        for j in 0..3 {
            let mut v = [a[j], a[3 + j], a[6 + j]];
            for q in cols.iter().take(j) {
                let dot = v[0] * q[0] + v[1] * q[1] + v[2] * q[2];
                for k in 0..3 {
                    v[k] -= dot * q[k];
                }
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm < 1e-8 {
                // Degenerate draw; retry with fresh randomness.
                cols = [[f64::NAN; 3]; 3];
                break;
            }
            for k in 0..3 {
                cols[j][k] = v[k] / norm;
            }
        }
        if cols[0][0].is_nan() {
            continue;
        }
        let mut q = [[0.0f64; 3]; 3];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..3 {
                q[i][j] = col[i];
            }
        }
        if det3(&q) < 0.0 {
            for row in &mut q {
                row[0] = -row[0];
            }
        }
        if allow_reflection && rng.gen::<bool>() {
            for row in &mut q {
                row[0] = -row[0];
            }
        }
        return q;
    }
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Apply `r` to every point of an `M x 3` buffer: `x_i' = R x_i`.
pub fn apply_orthogonal(r: &[[f64; 3]; 3], coords: &[f64]) -> Vec<f64> {
    assert_eq!(coords.len() % 3, 0, "coords must be M x 3");
    let mut out = vec![0.0; coords.len()];
    for (p, o) in coords.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
        for i in 0..3 {
            o[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
    }
    out
}

/// Translate every point by `t`.
pub fn translate(coords: &[f64], t: [f64; 3]) -> Vec<f64> {
    coords
        .chunks_exact(3)
        .flat_map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn remove_cog_leaves_centered_input_unchanged() {
        let p = vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(remove_cog(&p), p);
    }

    #[test]
    fn remove_cog_subtracts_mean() {
        let p = vec![1.0, 0.0, 0.0, 3.0, 0.0, 0.0];
        assert_eq!(remove_cog(&p), vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn remove_cog_random_input_recenters_below_1e12() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..15).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let centered = remove_cog(&p);
        assert!(max_abs_cog(&centered) < 1e-12);
    }

    proptest! {
        #[test]
        fn remove_cog_is_idempotent(points in proptest::collection::vec(-100.0f64..100.0, 3..60)) {
            prop_assume!(points.len() % 3 == 0);
            let once = remove_cog(&points);
            let twice = remove_cog(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_noise_is_the_origin() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let p = sample_subspace_noise(1, &mut rng);
        assert_eq!(p, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn subspace_noise_sums_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = sample_subspace_noise(7, &mut rng);
            for axis in 0..3 {
                let sum: f64 = p.chunks_exact(3).map(|q| q[axis]).sum();
                assert!(sum.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subspace_noise_variance_is_one_minus_recip_m() {
        // Each centered coordinate is Gaussian with variance 1 - 1/M.
        let m = 10;
        let n = 100_000;
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let samples: Vec<f64> = (0..n).map(|_| sample_subspace_noise(m, &mut rng)[0]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        let expected = 1.0 - 1.0 / m as f64;
        let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (var - expected).abs() < 3.0 * se,
            "variance {var} vs expected {expected} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn logpdf_at_mean_matches_normalizer() {
        // M = 2, sigma = 1: -(M-1)*3*ln(sqrt(2 pi)), 30-digit reference.
        let x = vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let v = subspace_gaussian_logpdf(&x, &x, 1.0).unwrap();
        assert!((v - (-2.75681559961401822534098920922)).abs() < 1e-12);
    }

    #[test]
    fn logpdf_sigma_doubling_shifts_by_normalizer() {
        let x = vec![-1.0, 0.5, 0.0, 1.0, -0.5, 0.0];
        let a = subspace_gaussian_logpdf(&x, &x, 1.0).unwrap();
        let b = subspace_gaussian_logpdf(&x, &x, 2.0).unwrap();
        assert!((a - b - 3.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_rejects_uncentered_input() {
        let x = vec![1.0, 0.0, 0.0, 3.0, 0.0, 0.0];
        let mu = vec![0.0; 6];
        assert!(matches!(
            subspace_gaussian_logpdf(&x, &mu, 1.0),
            Err(crate::EdmError::CogViolation { .. })
        ));
    }

    /// Orthonormal basis of the per-axis mean-zero subspace of R^M
    /// (Helmert vectors).
    fn helmert_basis(m: usize) -> Vec<Vec<f64>> {
        (1..m)
            .map(|k| {
                let norm = (k as f64 * (k + 1) as f64).sqrt();
                let mut v = vec![0.0; m];
                for item in v.iter_mut().take(k) {
                    *item = 1.0 / norm;
                }
                v[k] = -(k as f64) / norm;
                v
            })
            .collect()
    }

    /// Ambient-space Gaussian density of the (M-1)*3 subspace coordinates
    /// under an explicit orthonormal basis.
    fn logpdf_via_explicit_basis(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
        let m = x.len() / 3;
        let basis = helmert_basis(m);
        let project = |p: &[f64]| -> Vec<f64> {
            let mut coords = Vec::with_capacity((m - 1) * 3);
            for b in &basis {
                for axis in 0..3 {
                    coords.push((0..m).map(|i| b[i] * p[i * 3 + axis]).sum());
                }
            }
            coords
        };
        let xc = project(x);
        let muc = project(mu);
        let d = xc.len() as f64;
        let sq: f64 = xc.iter().zip(&muc).map(|(a, b)| (a - b) * (a - b)).sum();
        -d * ((2.0 * std::f64::consts::PI).sqrt() * sigma).ln() - sq / (2.0 * sigma * sigma)
    }

    #[test]
    fn logpdf_matches_explicit_basis_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..20 {
            let x = sample_subspace_noise(3, &mut rng);
            let mu = sample_subspace_noise(3, &mut rng);
            let sigma = rng.gen_range(0.2..=2.5);
            let got = subspace_gaussian_logpdf(&x, &mu, sigma).unwrap();
            let want = logpdf_via_explicit_basis(&x, &mu, sigma);
            assert!((got - want).abs() < 1e-10, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn logpdf_is_rotation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let x = sample_subspace_noise(6, &mut rng);
        let mu = sample_subspace_noise(6, &mut rng);
        let base = subspace_gaussian_logpdf(&x, &mu, 0.8).unwrap();
        for _ in 0..10 {
            let q = random_orthogonal(&mut rng, true);
            let rx = apply_orthogonal(&q, &x);
            let rmu = apply_orthogonal(&q, &mu);
            let rotated = subspace_gaussian_logpdf(&rx, &rmu, 0.8).unwrap();
            assert!((base - rotated).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_equal_sigma_trivials() {
        let mu = vec![0.3, -0.7, 1.1];
        assert_eq!(kl_equal_sigma(&mu, &mu, 0.5), 0.0);
        // ||dmu|| = 2, sigma = 1 -> 2.0
        let a = vec![0.0, 0.0, 0.0];
        let b = vec![2.0, 0.0, 0.0];
        assert!((kl_equal_sigma(&a, &b, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_equal_sigma_concat_decomposes_into_parts() {
        let x1 = vec![0.1, -0.2, 0.4];
        let x2 = vec![0.3, 0.3, -0.5];
        let h1 = vec![1.0, -1.0];
        let h2 = vec![0.5, 0.5];
        let cat1: Vec<f64> = x1.iter().chain(&h1).copied().collect();
        let cat2: Vec<f64> = x2.iter().chain(&h2).copied().collect();
        let joint = kl_equal_sigma(&cat1, &cat2, 0.7);
        let parts = kl_equal_sigma(&x1, &x2, 0.7) + kl_equal_sigma(&h1, &h2, 0.7);
        assert!((joint - parts).abs() < 1e-12);
    }

    /// Monte Carlo KL(q || p) = E_q[log q - log p] with its standard error.
    fn mc_kl(
        mu1: &[f64],
        sigma1: f64,
        mu2: &[f64],
        sigma2: f64,
        n: usize,
        rng: &mut ChaCha20Rng,
    ) -> (f64, f64) {
        use rand_distr::StandardNormal;
        let d = mu1.len();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut log_q = 0.0;
            let mut log_p = 0.0;
            for i in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let x = mu1[i] + sigma1 * e;
                log_q += -sigma1.ln() - (x - mu1[i]).powi(2) / (2.0 * sigma1 * sigma1);
                log_p += -sigma2.ln() - (x - mu2[i]).powi(2) / (2.0 * sigma2 * sigma2);
            }
            let ratio = log_q - log_p;
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn kl_equal_sigma_matches_monte_carlo() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let mu1 = vec![0.4, -0.2, 0.9, 0.1];
        let mu2 = vec![-0.3, 0.5, 0.6, -0.4];
        let analytic = kl_equal_sigma(&mu1, &mu2, 0.7);
        let (mc, se) = mc_kl(&mu1, 0.7, &mu2, 0.7, 1_000_000, &mut rng);
        assert!((analytic - mc).abs() < 3.0 * se, "analytic {analytic}, mc {mc} +- {se}");
    }

    #[test]
    fn kl_isotropic_trivials_and_reference_value() {
        let mu = vec![0.2, -0.1, 0.7];
        assert!(kl_isotropic(&mu, 1.3, &mu, 1.3, 3).unwrap().abs() < 1e-12);
        // mu1 = mu2, s1 = 1, s2 = 2, d = 3: 3 ln 2 + 3/8 - 3/2, 30-digit
        // reference.
        let v = kl_isotropic(&mu, 1.0, &mu, 2.0, 3).unwrap();
        assert!((v - 0.954441541679835928251696364375).abs() < 1e-12);
    }

    #[test]
    fn kl_isotropic_matches_monte_carlo() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let mu1 = vec![0.4, -0.2, 0.9, 0.1, -0.6, 0.3];
        let mu2 = vec![-0.3, 0.5, 0.6, -0.4, 0.2, -0.1];
        let analytic = kl_isotropic(&mu1, 0.8, &mu2, 1.4, 6).unwrap();
        let (mc, se) = mc_kl(&mu1, 0.8, &mu2, 1.4, 1_000_000, &mut rng);
        assert!((analytic - mc).abs() < 3.0 * se, "analytic {analytic}, mc {mc} +- {se}");
    }

    #[test]
    fn kl_isotropic_rejects_zero_dimension() {
        assert!(kl_isotropic(&[0.0], 1.0, &[0.0], 1.0, 0).is_err());
    }

    #[test]
    fn random_orthogonal_is_orthogonal_and_special() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..50 {
            let q = random_orthogonal(&mut rng, false);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| q[k][i] * q[k][j]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-12);
                }
            }
            assert!((det3(&q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_orthogonal_reflects_half_the_time() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let dets: Vec<f64> = (0..200).map(|_| det3(&random_orthogonal(&mut rng, true))).collect();
        let reflections = dets.iter().filter(|&&d| d < 0.0).count();
        assert!(dets.iter().all(|d| (d.abs() - 1.0).abs() < 1e-12));
        assert!((40..=160).contains(&reflections), "{reflections} reflections out of 200");
    }

    #[test]
    fn random_orthogonal_preserves_norms() {
        let mut rng = ChaCha20Rng::seed_from_u64(47);
        for _ in 0..20 {
            let q = random_orthogonal(&mut rng, true);
            let v = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let rv = apply_orthogonal(&q, &v);
            let n1 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let n2 = (rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]).sqrt();
            assert!((n1 - n2).abs() < 1e-12);
        }
    }
}
