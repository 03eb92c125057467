use std::collections::BTreeMap;

use crate::error::Result;

use super::params::ParameterSet;

/// First/second-moment state persisted per parameter across steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every parameter in `params`.
///
/// Every parameter must carry a gradient (populated by `backward` +
/// `accumulate_param_grads`); a missing gradient is rejected naming the
/// parameter path. Gradients are left in place; callers zero them at the
/// start of the next step.
pub fn adam_step(
    params: &mut ParameterSet,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    params.require_grads()?;
    state.step += 1;
    let t = state.step;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (path, tensor) in params.iter_mut() {
        let g = tensor.grad.as_ref().unwrap();
        let m = state.m.entry(path.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(path.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
