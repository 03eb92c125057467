//! Denoising dynamics: equivariant graph convolutional layers, the full
//! EGNN, the noise-prediction wrapper with zero-CoG projection and optional
//! conditioning, and the non-equivariant message-passing baseline used for
//! the equivariance ablation.
//!
//! The graph is always fully connected; desk-scale molecules keep the
//! O(M^2) edge set cheap. Edge attribute `a_ij` is the squared distance at
//! the network input, fixed across layers.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParameterSet, Tensor};
use crate::error::Result;
use crate::geometry;

/// Architecture switches for the denoising network.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    /// Number of message-passing layers.
    pub n_layers: usize,
    /// Hidden width nf.
    pub nf: usize,
    /// Invariant node-feature width F (one-hot classes plus optional charge
    /// channel).
    pub feature_dim: usize,
    /// 0 for unconditional; 1 when a scalar property is concatenated to the
    /// node features.
    pub conditioning_dim: usize,
    /// Equivariant EGNN when true, the coordinate-as-feature baseline when
    /// false.
    pub equivariant: bool,
}

impl DynamicsConfig {
    /// Node-feature input width: `F + 1` for the time feature, plus the
    /// conditioning channel. The baseline additionally consumes the three
    /// coordinates as features.
    pub fn input_dim(&self) -> usize {
        let base = self.feature_dim + 1 + self.conditioning_dim;
        if self.equivariant {
            base
        } else {
            base + 3
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.equivariant {
            self.feature_dim
        } else {
            self.feature_dim + 3
        }
    }

    fn validate(&self) {
        assert!(self.n_layers >= 1, "n_layers must be >= 1");
        assert!(self.nf >= 1, "nf must be >= 1");
        assert!(self.feature_dim >= 1, "feature_dim must be >= 1");
    }
}

/// Directed edge lists of the fully connected graph over `m` nodes
/// (all ordered pairs `(i, j)`, `i != j`). Messages aggregate at `src`.
pub struct EdgeIndex {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
}

impl EdgeIndex {
    pub fn fully_connected(m: usize) -> Self {
        let mut src = Vec::with_capacity(m * m.saturating_sub(1));
        let mut dst = Vec::with_capacity(m * m.saturating_sub(1));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    src.push(i);
                    dst.push(j);
                }
            }
        }
        EdgeIndex { src: Rc::new(src), dst: Rc::new(dst) }
    }
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, numel: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn insert_linear<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    rng: &mut R,
    prefix: &str,
    k: usize,
    fan_in: usize,
    fan_out: usize,
    zero: bool,
) {
    let w = if zero {
        vec![0.0; fan_in * fan_out]
    } else {
        uniform_init(rng, fan_in, fan_in * fan_out)
    };
    let b = if zero { vec![0.0; fan_out] } else { uniform_init(rng, fan_in, fan_out) };
    params.insert(&format!("{prefix}.w{k}"), Tensor::new(vec![fan_in, fan_out], w));
    params.insert(&format!("{prefix}.b{k}"), Tensor::new(vec![fan_out], b));
}

/// Fresh parameters for the configured architecture, under the checkpoint
/// naming scheme `layer{i}.phi_{e|h|x|inf}.{w|b}{k}` with `embed`/`decode`
/// affine maps bracketing the stack.
///
/// Weights use uniform fan-in scaling; the final layer of each phi_x is
/// zero-initialized so initial coordinate updates vanish.
pub fn init_params<R: Rng + ?Sized>(cfg: &DynamicsConfig, rng: &mut R) -> ParameterSet {
    cfg.validate();
    let nf = cfg.nf;
    let mut params = ParameterSet::new();
    insert_linear(&mut params, rng, "embed", 0, cfg.input_dim(), nf, false);
    for layer in 0..cfg.n_layers {
        let p = |name: &str| format!("layer{layer}.{name}");
        let edge_in = if cfg.equivariant { 2 * nf + 2 } else { 2 * nf + 1 };
        insert_linear(&mut params, rng, &p("phi_e"), 0, edge_in, nf, false);
        insert_linear(&mut params, rng, &p("phi_e"), 1, nf, nf, false);
        insert_linear(&mut params, rng, &p("phi_inf"), 0, nf, 1, false);
        insert_linear(&mut params, rng, &p("phi_h"), 0, 2 * nf, nf, false);
        insert_linear(&mut params, rng, &p("phi_h"), 1, nf, nf, false);
        if cfg.equivariant {
            insert_linear(&mut params, rng, &p("phi_x"), 0, 2 * nf + 2, nf, false);
            insert_linear(&mut params, rng, &p("phi_x"), 1, nf, nf, false);
            insert_linear(&mut params, rng, &p("phi_x"), 2, nf, 1, true);
        }
    }
    insert_linear(&mut params, rng, "decode", 0, nf, cfg.output_dim(), false);
    params
}

fn linear(g: &mut Graph, params: &ParameterSet, prefix: &str, k: usize, x: NodeId) -> Result<NodeId> {
    let w = g.param(params, &format!("{prefix}.w{k}"))?;
    let b = g.param(params, &format!("{prefix}.b{k}"))?;
    let y = g.matmul(x, w);
    Ok(g.add(y, b))
}

/// One equivariant convolutional layer.
///
/// Messages `m_ij = phi_e(h_i, h_j, d_ij^2, a_ij)` are gated by the edge
/// inference `e_ij = phi_inf(m_ij)` and aggregated into the node update
/// `h_i' = phi_h(h_i, sum_j e_ij m_ij)`; coordinates move along pairwise
/// differences, `x_i' = x_i + sum_j (x_i - x_j) / (d_ij + 1) * phi_x(...)`.
pub fn egcl_forward(
    g: &mut Graph,
    params: &ParameterSet,
    layer: usize,
    x: NodeId,
    h: NodeId,
    a: NodeId,
    edges: &EdgeIndex,
) -> Result<(NodeId, NodeId)> {
    let (m, _) = g.shape(x);
    assert!(m >= 1, "egcl_forward: empty point set");
    let p = |name: &str| format!("layer{layer}.{name}");

    let x_src = g.select_rows(x, edges.src.clone());
    let x_dst = g.select_rows(x, edges.dst.clone());
    let diff = g.sub(x_src, x_dst);
    let sq = g.square(diff);
    let d2 = g.sum_last(sq);

    let h_src = g.select_rows(h, edges.src.clone());
    let h_dst = g.select_rows(h, edges.dst.clone());
    let hh = g.concat_last(h_src, h_dst);
    let dists = g.concat_last(d2, a);
    let edge_in = g.concat_last(hh, dists);

    let e0 = linear(g, params, &p("phi_e"), 0, edge_in)?;
    let e0 = g.silu(e0);
    let e1 = linear(g, params, &p("phi_e"), 1, e0)?;
    let msg = g.silu(e1);

    let att_logit = linear(g, params, &p("phi_inf"), 0, msg)?;
    let att = g.sigmoid(att_logit);
    let gated = g.mul(msg, att);
    let agg = g.scatter_add_rows(gated, edges.src.clone(), m);

    let h_in = g.concat_last(h, agg);
    let n0 = linear(g, params, &p("phi_h"), 0, h_in)?;
    let n0 = g.silu(n0);
    let n1 = linear(g, params, &p("phi_h"), 1, n0)?;
    let h_out = g.add(h, n1);

    let c0 = linear(g, params, &p("phi_x"), 0, edge_in)?;
    let c0 = g.silu(c0);
    let c1 = linear(g, params, &p("phi_x"), 1, c0)?;
    let c1 = g.silu(c1);
    let coef = linear(g, params, &p("phi_x"), 2, c1)?;
    let d = g.sqrt(d2);
    let denom = g.add_scalar(d, 1.0);
    let scaled = g.div(coef, denom);
    let upd = g.mul(diff, scaled);
    let agg_x = g.scatter_add_rows(upd, edges.src.clone(), m);
    let x_out = g.add(x, agg_x);

    Ok((x_out, h_out))
}

/// EGNN: an input embedding, `n_layers` EGCL layers, and an output decoding
/// on the feature stream. Coordinates transform equivariantly, features are
/// invariant.
pub fn egnn_forward(
    g: &mut Graph,
    params: &ParameterSet,
    cfg: &DynamicsConfig,
    x: NodeId,
    feats: NodeId,
) -> Result<(NodeId, NodeId)> {
    cfg.validate();
    let (m, _) = g.shape(x);
    let edges = EdgeIndex::fully_connected(m);

    let x_src = g.select_rows(x, edges.src.clone());
    let x_dst = g.select_rows(x, edges.dst.clone());
    let diff0 = g.sub(x_src, x_dst);
    let sq0 = g.square(diff0);
    let a = g.sum_last(sq0);

    let mut h = linear(g, params, "embed", 0, feats)?;
    let mut xc = x;
    for layer in 0..cfg.n_layers {
        let (x_next, h_next) = egcl_forward(g, params, layer, xc, h, a, &edges)?;
        xc = x_next;
        h = h_next;
    }
    let h_out = linear(g, params, "decode", 0, h)?;
    Ok((xc, h_out))
}

/// Assemble the invariant node-feature block `[z_h, t/T(, c)]` as a
/// constant.
fn feature_block(
    g: &mut Graph,
    zh: &[f64],
    m: usize,
    f: usize,
    t: usize,
    t_max: usize,
    condition: Option<f64>,
    prepend_x: Option<&[f64]>,
) -> NodeId {
    let extra = 1 + usize::from(condition.is_some()) + if prepend_x.is_some() { 3 } else { 0 };
    let cols = f + extra;
    let mut vals = Vec::with_capacity(m * cols);
    let t_frac = t as f64 / t_max as f64;
    for i in 0..m {
        if let Some(x) = prepend_x {
            vals.extend_from_slice(&x[i * 3..i * 3 + 3]);
        }
        vals.extend_from_slice(&zh[i * f..(i + 1) * f]);
        vals.push(t_frac);
        if let Some(c) = condition {
            vals.push(c);
        }
    }
    g.constant(m, cols, vals)
}

/// Noise prediction `eps_x, eps_h = EGNN(z_x, [z_h, t/T(, c)]) - [z_x, 0]`,
/// with `eps_x` projected back onto the zero-CoG subspace by subtracting its
/// center of gravity. Rejects inputs with a nonzero center of gravity.
pub fn dynamics_predict(
    g: &mut Graph,
    params: &ParameterSet,
    cfg: &DynamicsConfig,
    zx: &[f64],
    zh: &[f64],
    t: usize,
    t_max: usize,
    condition: Option<f64>,
) -> Result<(NodeId, NodeId)> {
    let m = zx.len() / 3;
    let f = cfg.feature_dim;
    assert_eq!(zh.len(), m * f, "zh must be M x feature_dim");
    assert!(t <= t_max, "t must lie in 0..=T");
    assert_eq!(condition.is_some(), cfg.conditioning_dim > 0, "conditioning mismatch with config");
    geometry::check_zero_cog("dynamics_predict", zx)?;

    let x0 = g.constant(m, 3, zx.to_vec());
    let feats = feature_block(g, zh, m, f, t, t_max, condition, None);
    let (x_out, h_out) = egnn_forward(g, params, cfg, x0, feats)?;
    let raw = g.sub(x_out, x0);
    let mean = g.mean_axis0(raw);
    let eps_x = g.sub(raw, mean);
    Ok((eps_x, h_out))
}

/// Non-equivariant baseline: coordinates are concatenated with the other
/// node features, a plain message-passing network runs on the result, and
/// the output is split back into positional and feature noise. The
/// positional part is still projected to zero CoG for process consistency.
pub fn gdm_predict(
    g: &mut Graph,
    params: &ParameterSet,
    cfg: &DynamicsConfig,
    zx: &[f64],
    zh: &[f64],
    t: usize,
    t_max: usize,
    condition: Option<f64>,
) -> Result<(NodeId, NodeId)> {
    let m = zx.len() / 3;
    let f = cfg.feature_dim;
    assert_eq!(zh.len(), m * f, "zh must be M x feature_dim");
    assert!(t <= t_max, "t must lie in 0..=T");
    assert_eq!(condition.is_some(), cfg.conditioning_dim > 0, "conditioning mismatch with config");
    geometry::check_zero_cog("gdm_predict", zx)?;

    let edges = EdgeIndex::fully_connected(m);
    let x0 = g.constant(m, 3, zx.to_vec());
    let x_src = g.select_rows(x0, edges.src.clone());
    let x_dst = g.select_rows(x0, edges.dst.clone());
    let diff0 = g.sub(x_src, x_dst);
    let sq0 = g.square(diff0);
    let a = g.sum_last(sq0);

    let feats = feature_block(g, zh, m, f, t, t_max, condition, Some(zx));
    let mut h = linear(g, params, "embed", 0, feats)?;
    for layer in 0..cfg.n_layers {
        let p = |name: &str| format!("layer{layer}.{name}");
        let h_src = g.select_rows(h, edges.src.clone());
        let h_dst = g.select_rows(h, edges.dst.clone());
        let hh = g.concat_last(h_src, h_dst);
        let edge_in = g.concat_last(hh, a);
        let e0 = linear(g, params, &p("phi_e"), 0, edge_in)?;
        let e0 = g.silu(e0);
        let e1 = linear(g, params, &p("phi_e"), 1, e0)?;
        let msg = g.silu(e1);
        let att_logit = linear(g, params, &p("phi_inf"), 0, msg)?;
        let att = g.sigmoid(att_logit);
        let gated = g.mul(msg, att);
        let agg = g.scatter_add_rows(gated, edges.src.clone(), m);
        let h_in = g.concat_last(h, agg);
        let n0 = linear(g, params, &p("phi_h"), 0, h_in)?;
        let n0 = g.silu(n0);
        let n1 = linear(g, params, &p("phi_h"), 1, n0)?;
        h = g.add(h, n1);
    }
    let out = linear(g, params, "decode", 0, h)?;
    let raw_x = g.slice_last(out, 0, 3);
    let mean = g.mean_axis0(raw_x);
    let eps_x = g.sub(raw_x, mean);
    let eps_h = g.slice_last(out, 3, f);
    Ok((eps_x, eps_h))
}

/// Dispatch on the configured architecture.
pub fn predict(
    g: &mut Graph,
    params: &ParameterSet,
    cfg: &DynamicsConfig,
    zx: &[f64],
    zh: &[f64],
    t: usize,
    t_max: usize,
    condition: Option<f64>,
) -> Result<(NodeId, NodeId)> {
    if cfg.equivariant {
        dynamics_predict(g, params, cfg, zx, zh, t, t_max, condition)
    } else {
        gdm_predict(g, params, cfg, zx, zh, t, t_max, condition)
    }
}

/// Evaluate the noise prediction without keeping the graph.
pub fn predict_values(
    params: &ParameterSet,
    cfg: &DynamicsConfig,
    zx: &[f64],
    zh: &[f64],
    t: usize,
    t_max: usize,
    condition: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let (ex, eh) = predict(&mut g, params, cfg, zx, zh, t, t_max, condition)?;
    Ok((g.values(ex).to_vec(), g.values(eh).to_vec()))
}
