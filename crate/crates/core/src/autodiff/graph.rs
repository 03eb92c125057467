use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{EdmError, Result};

use super::params::ParameterSet;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Recorded operation, referencing parent nodes by id.
#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf; receives no gradient.
    Leaf,
    /// Trainable leaf copied from a `ParameterSet`; gradient is exported
    /// back under the recorded path.
    Param(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Sum over the last axis with keepdim: `(r, c) -> (r, 1)`.
    SumLast(NodeId),
    /// Mean over the first axis with keepdim: `(r, c) -> (1, c)`.
    MeanAxis0(NodeId),
    ConcatLast(NodeId, NodeId),
    SliceLast(NodeId, usize, usize),
    /// Row gather: `out[k, :] = in[idx[k], :]`.
    SelectRows(NodeId, Rc<Vec<usize>>),
    /// Row scatter-add: `out[idx[k], :] += in[k, :]`.
    ScatterAddRows(NodeId, Rc<Vec<usize>>),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Tape of recorded tensor operations over flat `f64` storage.
///
/// Node creation order is the topological order used by [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_cache: HashMap<String, NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node { rows, cols, values, grad: None, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.node(id).values
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let n = self.node(id);
        assert!(n.rows == 1 && n.cols == 1, "scalar() on shape ({}, {})", n.rows, n.cols);
        n.values[0]
    }

    /// Gradient of `id`, populated by [`Graph::backward`]. `None` for nodes
    /// that are not ancestors of the loss or do not require gradients.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> NodeId {
        assert_eq!(
            values.len(),
            rows * cols,
            "constant: {} values do not fill shape ({rows}, {cols})",
            values.len()
        );
        self.push(rows, cols, values, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    /// Trainable leaf holding a copy of a parameter. Interned: repeated
    /// requests for the same path within one graph return the same node, so
    /// gradients from every use accumulate.
    pub fn param(&mut self, params: &ParameterSet, path: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_cache.get(path) {
            return Ok(id);
        }
        let tensor = params.get(path).ok_or_else(|| EdmError::UnknownParam { path: path.to_string() })?;
        let (rows, cols) = dims2(&tensor.shape);
        let id = self.push(rows, cols, tensor.values.clone(), Op::Param(path.to_string()), true);
        self.param_cache.insert(path.to_string(), id);
        Ok(id)
    }

    // ── Elementwise binary ops with broadcasting ────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let (ro, co) = broadcast_shape((ra, ca), (rb, cb));
        let mut out = vec![0.0; ro * co];
        {
            let av = &self.node(a).values;
            let bv = &self.node(b).values;
            for i in 0..ro {
                let ia = if ra == 1 { 0 } else { i };
                let ib = if rb == 1 { 0 } else { i };
                for j in 0..co {
                    let ja = if ca == 1 { 0 } else { j };
                    let jb = if cb == 1 { 0 } else { j };
                    out[i * co + j] = f(av[ia * ca + ja], bv[ib * cb + jb]);
                }
            }
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(ro, co, out, op, needs)
    }

    // ── Matrix multiply ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, rb, "matmul: inner dims differ, ({ra}, {ca}) vs ({rb}, {cb})");
        let out = matmul_raw(&self.node(a).values, ra, ca, &self.node(b).values, cb);
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(ra, cb, out, Op::Matmul(a, b), needs)
    }

    // ── Elementwise unary ops ───────────────────────────────────────────

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.node(a).values.iter().map(|&x| f(x)).collect();
        let needs = self.node(a).needs_grad;
        self.push(r, c, out, op, needs)
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.node(a).values.iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(1, 1, vec![s], Op::SumAll(a), needs)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.node(a).values.len();
        assert!(n > 0, "mean_all on empty tensor");
        let s: f64 = self.node(a).values.iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(1, 1, vec![s / n as f64], Op::MeanAll(a), needs)
    }

    /// Sum over the last axis, keeping a trailing axis: `(r, c) -> (r, 1)`.
    pub fn sum_last(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.node(a).values;
        let out: Vec<f64> = (0..r).map(|i| av[i * c..(i + 1) * c].iter().sum()).collect();
        let needs = self.node(a).needs_grad;
        self.push(r, 1, out, Op::SumLast(a), needs)
    }

    /// Mean over the first axis, keeping a leading axis: `(r, c) -> (1, c)`.
    pub fn mean_axis0(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(r > 0, "mean_axis0 on empty tensor");
        let av = &self.node(a).values;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += av[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        let needs = self.node(a).needs_grad;
        self.push(1, c, out, Op::MeanAxis0(a), needs)
    }

    // ── Structure: concat / slice / gather / scatter ────────────────────

    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat_last: row counts differ, ({ra}, {ca}) vs ({rb}, {cb})");
        let mut out = Vec::with_capacity(ra * (ca + cb));
        {
            let av = &self.node(a).values;
            let bv = &self.node(b).values;
            for i in 0..ra {
                out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
            }
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(ra, ca + cb, out, Op::ConcatLast(a, b), needs)
    }

    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_last: [{start}, {}) out of bounds for ({r}, {c})", start + len);
        let av = &self.node(a).values;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        let needs = self.node(a).needs_grad;
        self.push(r, len, out, Op::SliceLast(a, start, len), needs)
    }

    pub fn select_rows(&mut self, a: NodeId, idx: Rc<Vec<usize>>) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.node(a).values;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            assert!(i < r, "select_rows: index {i} out of bounds for ({r}, {c})");
            out.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        let needs = self.node(a).needs_grad;
        let k = idx.len();
        self.push(k, c, out, Op::SelectRows(a, idx), needs)
    }

    pub fn scatter_add_rows(&mut self, a: NodeId, idx: Rc<Vec<usize>>, out_rows: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, idx.len(), "scatter_add_rows: {r} rows but {} indices", idx.len());
        let av = &self.node(a).values;
        let mut out = vec![0.0; out_rows * c];
        for (k, &i) in idx.iter().enumerate() {
            assert!(i < out_rows, "scatter_add_rows: index {i} out of bounds for {out_rows} rows");
            for j in 0..c {
                out[i * c + j] += av[k * c + j];
            }
        }
        let needs = self.node(a).needs_grad;
        self.push(out_rows, c, out, Op::ScatterAddRows(a, idx), needs)
    }

    // ── Backward pass ───────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every node that
    /// requires gradients and is an ancestor of `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let n = self.node(loss);
        if n.rows != 1 || n.cols != 1 {
            return Err(EdmError::NonScalarLoss { shape: vec![n.rows, n.cols] });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            self.step_backward(i);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: NodeId) {
        if self.nodes[id.0].grad.is_none() {
            let len = self.nodes[id.0].values.len();
            self.nodes[id.0].grad = Some(vec![0.0; len]);
        }
    }

    /// Accumulate `g` into the grad of `id`, summing over axes that were
    /// broadcast from shape `(ri, ci)` up to the shape of `g`.
    fn accumulate_reduced(&mut self, id: NodeId, g: &[f64], go: (usize, usize)) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let (ri, ci) = self.shape(id);
        let (ro, co) = go;
        self.ensure_grad(id);
        let dst = self.nodes[id.0].grad.as_mut().unwrap();
        for i in 0..ro {
            let it = if ri == 1 { 0 } else { i };
            for j in 0..co {
                let jt = if ci == 1 { 0 } else { j };
                dst[it * ci + jt] += g[i * co + j];
            }
        }
    }

    fn step_backward(&mut self, i: usize) {
        let op = self.nodes[i].op.clone();
        let g = self.nodes[i].grad.clone().unwrap();
        let (ro, co) = (self.nodes[i].rows, self.nodes[i].cols);
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate_reduced(a, &g, (ro, co));
                self.accumulate_reduced(b, &g, (ro, co));
            }
            Op::Sub(a, b) => {
                self.accumulate_reduced(a, &g, (ro, co));
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate_reduced(b, &neg, (ro, co));
            }
            Op::Mul(a, b) => {
                let ga = self.broadcast_combine(&g, (ro, co), b, |gv, other| gv * other);
                self.accumulate_reduced(a, &ga, (ro, co));
                let gb = self.broadcast_combine(&g, (ro, co), a, |gv, other| gv * other);
                self.accumulate_reduced(b, &gb, (ro, co));
            }
            Op::Div(a, b) => {
                let ga = self.broadcast_combine(&g, (ro, co), b, |gv, bv| gv / bv);
                self.accumulate_reduced(a, &ga, (ro, co));
                // d(a/b)/db = -a / b^2, evaluated on the broadcast grid
                let (rb, cb) = self.shape(b);
                let (ra, ca) = self.shape(a);
                let mut gb = vec![0.0; ro * co];
                {
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    for ii in 0..ro {
                        let ia = if ra == 1 { 0 } else { ii };
                        let ib = if rb == 1 { 0 } else { ii };
                        for jj in 0..co {
                            let ja = if ca == 1 { 0 } else { jj };
                            let jb = if cb == 1 { 0 } else { jj };
                            let bval = bv[ib * cb + jb];
                            gb[ii * co + jj] = -g[ii * co + jj] * av[ia * ca + ja] / (bval * bval);
                        }
                    }
                }
                self.accumulate_reduced(b, &gb, (ro, co));
            }
            Op::Matmul(a, b) => {
                let (ra, ca) = self.shape(a);
                let (_rb, cb) = self.shape(b);
                if self.nodes[a.0].needs_grad {
                    // dA = g @ B^T
                    let bt = transpose(&self.nodes[b.0].values, ca, cb);
                    let da = matmul_raw(&g, ra, cb, &bt, ca);
                    self.ensure_grad(a);
                    add_into(self.nodes[a.0].grad.as_mut().unwrap(), &da);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T @ g
                    let at = transpose(&self.nodes[a.0].values, ra, ca);
                    let db = matmul_raw(&at, ca, ra, &g, cb);
                    self.ensure_grad(b);
                    add_into(self.nodes[b.0].grad.as_mut().unwrap(), &db);
                }
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                self.accumulate_same(a, &ga);
            }
            Op::AddScalar(a) => self.accumulate_same(a, &g),
            Op::Square(a) => {
                let ga: Vec<f64> =
                    g.iter().zip(&self.nodes[a.0].values).map(|(gv, &x)| 2.0 * x * gv).collect();
                self.accumulate_same(a, &ga);
            }
            Op::Sqrt(a) => {
                let ga: Vec<f64> =
                    g.iter().zip(&self.nodes[i].values).map(|(gv, &y)| gv / (2.0 * y)).collect();
                self.accumulate_same(a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g.iter().zip(&self.nodes[i].values).map(|(gv, &y)| gv * y).collect();
                self.accumulate_same(a, &ga);
            }
            Op::Log(a) => {
                let ga: Vec<f64> =
                    g.iter().zip(&self.nodes[a.0].values).map(|(gv, &x)| gv / x).collect();
                self.accumulate_same(a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[i].values)
                    .map(|(gv, &y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate_same(a, &ga);
            }
            Op::Silu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].values)
                    .map(|(gv, &x)| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate_same(a, &ga);
            }
            Op::SumAll(a) => {
                let len = self.nodes[a.0].values.len();
                let ga = vec![g[0]; len];
                self.accumulate_same(a, &ga);
            }
            Op::MeanAll(a) => {
                let len = self.nodes[a.0].values.len();
                let ga = vec![g[0] / len as f64; len];
                self.accumulate_same(a, &ga);
            }
            Op::SumLast(a) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                for ii in 0..r {
                    for jj in 0..c {
                        ga[ii * c + jj] = g[ii];
                    }
                }
                self.accumulate_same(a, &ga);
            }
            Op::MeanAxis0(a) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                for ii in 0..r {
                    for jj in 0..c {
                        ga[ii * c + jj] = g[jj] / r as f64;
                    }
                }
                self.accumulate_same(a, &ga);
            }
            Op::ConcatLast(a, b) => {
                let (ra, ca) = self.shape(a);
                let (_, cb) = self.shape(b);
                let mut ga = vec![0.0; ra * ca];
                let mut gb = vec![0.0; ra * cb];
                for ii in 0..ra {
                    ga[ii * ca..(ii + 1) * ca].copy_from_slice(&g[ii * co..ii * co + ca]);
                    gb[ii * cb..(ii + 1) * cb].copy_from_slice(&g[ii * co + ca..(ii + 1) * co]);
                }
                self.accumulate_same(a, &ga);
                self.accumulate_same(b, &gb);
            }
            Op::SliceLast(a, start, len) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                for ii in 0..r {
                    ga[ii * c + start..ii * c + start + len]
                        .copy_from_slice(&g[ii * len..(ii + 1) * len]);
                }
                self.accumulate_same(a, &ga);
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                for (k, &src) in idx.iter().enumerate() {
                    for jj in 0..c {
                        ga[src * c + jj] += g[k * c + jj];
                    }
                }
                self.accumulate_same(a, &ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                for (k, &dst) in idx.iter().enumerate() {
                    ga[k * c..(k + 1) * c].copy_from_slice(&g[dst * c..(dst + 1) * c]);
                }
                self.accumulate_same(a, &ga);
            }
        }
    }

    fn accumulate_same(&mut self, id: NodeId, g: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        self.ensure_grad(id);
        add_into(self.nodes[id.0].grad.as_mut().unwrap(), g);
    }

    /// Evaluate `f(g, other)` on the broadcast output grid, reading `other`
    /// with broadcast indexing.
    fn broadcast_combine(
        &self,
        g: &[f64],
        go: (usize, usize),
        other: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Vec<f64> {
        let (ro, co) = go;
        let (rb, cb) = self.shape(other);
        let ov = &self.nodes[other.0].values;
        let mut out = vec![0.0; ro * co];
        for i in 0..ro {
            let ib = if rb == 1 { 0 } else { i };
            for j in 0..co {
                let jb = if cb == 1 { 0 } else { j };
                out[i * co + j] = f(g[i * co + j], ov[ib * cb + jb]);
            }
        }
        out
    }

    /// Add this graph's parameter gradients into the grad accumulators of
    /// `params`. Parameters that did not participate are left untouched.
    pub fn accumulate_param_grads(&self, params: &mut ParameterSet) {
        for node in &self.nodes {
            if let (Op::Param(path), Some(g)) = (&node.op, &node.grad) {
                params.accumulate_grad(path, g);
            }
        }
    }
}

/// Interpret a shape list as `(rows, cols)`; rank 0 is a scalar, rank 1 a row
/// vector, higher ranks flatten all leading axes into rows.
pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let r = match (a.0, b.0) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("broadcast: incompatible shapes ({}, {}) vs ({}, {})", a.0, a.1, b.0, b.1),
    };
    let c = match (a.1, b.1) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("broadcast: incompatible shapes ({}, {}) vs ({}, {})", a.0, a.1, b.0, b.1),
    };
    (r, c)
}

fn matmul_raw(a: &[f64], ra: usize, ca: usize, b: &[f64], cb: usize) -> Vec<f64> {
    let mut out = vec![0.0; ra * cb];
    for i in 0..ra {
        for k in 0..ca {
            let av = a[i * ca + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * cb..(k + 1) * cb];
            let orow = &mut out[i * cb..(i + 1) * cb];
            for j in 0..cb {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
