use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;

fn ps_from(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParameterSet {
    let mut ps = ParameterSet::new();
    for (path, shape, values) in entries {
        ps.insert(path, Tensor::new(shape.clone(), values.clone()));
    }
    ps
}

// ── Forward ops ─────────────────────────────────────────────────────────

#[test]
fn silu_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(1, 1, vec![0.0]);
    let y = g.silu(x);
    assert_eq!(g.scalar(y), 0.0);
}

#[test]
fn matmul_identity_preserves_vector() {
    let mut g = Graph::new();
    let eye = g.constant(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let v = g.constant(3, 1, vec![0.3, -1.7, 4.2]);
    let out = g.matmul(eye, v);
    assert_eq!(g.values(out), &[0.3, -1.7, 4.2]);
}

#[test]
fn sigmoid_matches_high_precision_reference() {
    // Reference value computed with 30-digit arithmetic.
    let mut g = Graph::new();
    let x = g.constant(1, 1, vec![0.5]);
    let y = g.sigmoid(x);
    assert!((g.scalar(y) - 0.622459331201854564638900565746).abs() < 1e-12);
}

#[test]
fn broadcast_row_and_column() {
    let mut g = Graph::new();
    let a = g.constant(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let row = g.constant(1, 3, vec![10.0, 20.0, 30.0]);
    let col = g.constant(2, 1, vec![100.0, 200.0]);
    let s1 = g.add(a, row);
    assert_eq!(g.values(s1), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let s2 = g.mul(a, col);
    assert_eq!(g.values(s2), &[100.0, 200.0, 300.0, 800.0, 1000.0, 1200.0]);
}

#[test]
#[should_panic(expected = "incompatible shapes (2, 3) vs (3, 2)")]
fn mismatched_shapes_are_rejected_with_both_named() {
    let mut g = Graph::new();
    let a = g.constant(2, 3, vec![0.0; 6]);
    let b = g.constant(3, 2, vec![0.0; 6]);
    g.add(a, b);
}

#[test]
#[should_panic(expected = "matmul: inner dims differ")]
fn matmul_inner_dim_mismatch_rejected() {
    let mut g = Graph::new();
    let a = g.constant(2, 3, vec![0.0; 6]);
    let b = g.constant(2, 3, vec![0.0; 6]);
    g.matmul(a, b);
}

#[test]
fn forward_passes_are_deterministic() {
    let ps = ps_from(&[("w", vec![4, 4], (0..16).map(|i| (i as f64).sin()).collect())]);
    let run = || {
        let mut g = Graph::new();
        let w = g.param(&ps, "w").unwrap();
        let x = g.constant(2, 4, (0..8).map(|i| (i as f64).cos()).collect());
        let y = g.matmul(x, w);
        let y = g.silu(y);
        let s = g.sum_all(y);
        g.scalar(s).to_bits()
    };
    assert_eq!(run(), run());
}

// ── Backward ────────────────────────────────────────────────────────────

#[test]
fn backward_of_sum_of_squares() {
    let ps = ps_from(&[("p", vec![2], vec![1.0, 2.0])]);
    let mut g = Graph::new();
    let p = g.param(&ps, "p").unwrap();
    let sq = g.square(p);
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[2.0, 4.0]);
}

#[test]
fn constant_ancestor_gets_no_grad() {
    let ps = ps_from(&[("p", vec![2], vec![1.0, 2.0])]);
    let mut g = Graph::new();
    let p = g.param(&ps, "p").unwrap();
    let c = g.constant(1, 2, vec![3.0, 4.0]);
    let prod = g.mul(p, c);
    let loss = g.sum_all(prod);
    g.backward(loss).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[3.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let ps = ps_from(&[("p", vec![2], vec![1.0, 2.0])]);
    let mut g = Graph::new();
    let p = g.param(&ps, "p").unwrap();
    let sq = g.square(p);
    assert!(matches!(g.backward(sq), Err(crate::EdmError::NonScalarLoss { .. })));
}

/// Central finite differences with the given step, relative error against
/// the analytic gradient.
fn finite_difference_check(
    params: &ParameterSet,
    eval: impl Fn(&ParameterSet) -> f64,
    grads: impl Fn(&str, usize) -> f64,
    step: f64,
    tol: f64,
) {
    for (path, tensor) in params.iter() {
        for i in 0..tensor.numel() {
            let mut plus = params.clone();
            plus.get_mut(path).unwrap().values[i] += step;
            let mut minus = params.clone();
            minus.get_mut(path).unwrap().values[i] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let an = grads(path, i);
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom < tol,
                "grad mismatch at {path}[{i}]: analytic {an}, finite-diff {fd}"
            );
        }
    }
}

/// Two-layer SiLU network exercising matmul, broadcast bias add, silu,
/// sigmoid, concat, slice, gather, scatter, div, sqrt, mean and sum.
fn rich_network_loss(ps: &ParameterSet, record: bool) -> (f64, Option<Graph>) {
    let mut g = Graph::new();
    let x = g.constant(
        3,
        4,
        vec![0.3, -0.8, 0.5, 1.2, -0.4, 0.9, -1.1, 0.2, 0.7, -0.3, 0.6, -0.9],
    );
    let w0 = g.param(ps, "w0").unwrap();
    let b0 = g.param(ps, "b0").unwrap();
    let w1 = g.param(ps, "w1").unwrap();
    let b1 = g.param(ps, "b1").unwrap();
    let h0 = g.matmul(x, w0);
    let h0 = g.add(h0, b0);
    let h0 = g.silu(h0);
    let idx = std::rc::Rc::new(vec![2usize, 0, 1, 1]);
    let gathered = g.select_rows(h0, idx.clone());
    let scattered = g.scatter_add_rows(gathered, idx, 3);
    let joined = g.concat_last(h0, scattered);
    let left = g.slice_last(joined, 0, 5);
    let h1 = g.matmul(left, w1);
    let h1 = g.add(h1, b1);
    let gate = g.sigmoid(h1);
    let gated = g.mul(h1, gate);
    let sq = g.square(gated);
    let row_norms = g.sum_last(sq);
    let shifted = g.add_scalar(row_norms, 1.0);
    let root = g.sqrt(shifted);
    let logd = g.log(root);
    let e = g.exp(logd);
    let col_mean = g.mean_axis0(e);
    let ratio = g.div(e, col_mean);
    let total = g.mean_all(ratio);
    let scaled = g.scale(total, 3.5);
    let value = g.scalar(scaled);
    if record {
        g.backward(scaled).unwrap();
        (value, Some(g))
    } else {
        (value, None)
    }
}

#[test]
fn gradients_match_central_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect() };
    let ps = ps_from(&[
        ("w0", vec![4, 5], rand_vec(20)),
        ("b0", vec![5], rand_vec(5)),
        ("w1", vec![5, 3], rand_vec(15)),
        ("b1", vec![3], rand_vec(3)),
    ]);
    let (_, g) = rich_network_loss(&ps, true);
    let g = g.unwrap();
    let mut analytic = ps.clone();
    g.accumulate_param_grads(&mut analytic);
    finite_difference_check(
        &ps,
        |p| rich_network_loss(p, false).0,
        |path, i| analytic.get(path).unwrap().grad.as_ref().unwrap()[i],
        1e-5,
        1e-4,
    );
}

#[test]
fn param_reuse_accumulates_gradients() {
    let ps = ps_from(&[("p", vec![2], vec![1.5, -0.5])]);
    let mut g = Graph::new();
    let p1 = g.param(&ps, "p").unwrap();
    let p2 = g.param(&ps, "p").unwrap();
    assert_eq!(p1, p2, "same path must intern to one node");
    let doubled = g.add(p1, p2);
    let sq = g.square(doubled);
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    // d/dp sum((2p)^2) = 8p
    assert_eq!(g.grad(p1).unwrap(), &[12.0, -4.0]);
}

// ── Adam ────────────────────────────────────────────────────────────────

#[test]
fn adam_first_step_moves_by_lr() {
    let mut ps = ps_from(&[("p", vec![1], vec![1.0])]);
    ps.get_mut("p").unwrap().grad = Some(vec![1.0]);
    let mut state = AdamState::new();
    adam_step(&mut ps, &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap();
    let v = ps.get("p").unwrap().values[0];
    assert!((v - 0.9).abs() < 1e-8, "bias-corrected first step moves by lr, got {v}");
}

#[test]
fn adam_zero_grad_changes_nothing() {
    let mut ps = ps_from(&[("p", vec![3], vec![1.0, -2.0, 3.0])]);
    ps.get_mut("p").unwrap().grad = Some(vec![0.0; 3]);
    let mut state = AdamState::new();
    adam_step(&mut ps, &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap();
    assert_eq!(ps.get("p").unwrap().values, vec![1.0, -2.0, 3.0]);
}

#[test]
fn adam_missing_grad_names_the_parameter() {
    let mut ps = ps_from(&[("layer0.w", vec![1], vec![1.0])]);
    let mut state = AdamState::new();
    let err = adam_step(&mut ps, &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap_err();
    assert!(err.to_string().contains("layer0.w"), "error must name the path: {err}");
}

/// Scalar reference Adam, written independently of the implementation.
fn reference_adam_trace(p0: f64, grad: f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for t in 1..=steps {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        p -= lr * mh / (vh.sqrt() + eps);
    }
    p
}

#[test]
fn adam_two_steps_match_reference_trace() {
    let mut ps = ps_from(&[("p", vec![1], vec![0.7])]);
    let mut state = AdamState::new();
    for _ in 0..2 {
        ps.get_mut("p").unwrap().grad = Some(vec![0.35]);
        adam_step(&mut ps, &mut state, 0.05, (0.9, 0.999), 1e-8).unwrap();
    }
    let expected = reference_adam_trace(0.7, 0.35, 0.05, 2);
    assert!((ps.get("p").unwrap().values[0] - expected).abs() < 1e-10);
}

// ── Checkpoints ─────────────────────────────────────────────────────────

fn example_checkpoint() -> Checkpoint {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut ps = ParameterSet::new();
    ps.insert("layer0.phi_e.w0", Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen()).collect()));
    ps.insert("layer0.phi_e.b0", Tensor::new(vec![2], vec![0.25, -0.75]));
    ps.insert("embed.w0", Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen()).collect()));
    let mut adam = AdamState::new();
    adam.step = 17;
    for (path, t) in ps.iter() {
        adam.m.insert(path.clone(), vec![0.125; t.numel()]);
        adam.v.insert(path.clone(), vec![0.0625; t.numel()]);
    }
    Checkpoint { params: ps, adam, metadata: "schedule.T = 50\nseed = 3\n".into() }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let ckpt = example_checkpoint();
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &ckpt).unwrap();
    let loaded = load_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(loaded, ckpt);
    let mut bytes2 = Vec::new();
    save_checkpoint(&mut bytes2, &loaded).unwrap();
    assert_eq!(bytes, bytes2, "save -> load -> save must produce identical bytes");
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &example_checkpoint()).unwrap();
    bytes[0] = b'X';
    assert!(load_checkpoint(&mut bytes.as_slice()).is_err());
}

#[test]
fn unknown_param_path_is_rejected() {
    let ps = ParameterSet::new();
    let mut g = Graph::new();
    let err = g.param(&ps, "nope").unwrap_err();
    assert!(err.to_string().contains("nope"));
}
