//! Training loop: per-molecule timestep draws, simplified loss, Adam
//! updates, optional rotation augmentation, and best-validation
//! checkpointing through a caller-supplied hook.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{adam_step, AdamState, Graph};
use crate::error::{EdmError, Result};
use crate::geometry;
use crate::molecule::Molecule;

use super::{EdmModel, LossWeighting, SizeDistribution};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<usize>,
    /// Apply an independent random rotation (and reflection with
    /// probability 1/2) to each molecule before noising.
    pub augment_rotations: bool,
    pub weighting: LossWeighting,
    pub seed: u64,
    /// Number of validation molecules used per evaluation.
    pub val_cap: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 1,
            max_steps: None,
            augment_rotations: false,
            weighting: LossWeighting::Simplified,
            seed: 0,
            val_cap: 64,
        }
    }
}

/// One row of the training log: `step,epoch,train_loss,val_nll`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub adam: AdamState,
    pub log: Vec<LogRow>,
    pub best_val_nll: Option<f64>,
    /// Mean/stdev used to normalize the conditioning property, when
    /// conditional.
    pub cond_stats: Option<(f64, f64)>,
}

/// Zero-mean/unit-variance statistics of the conditioning property over the
/// training split.
pub fn condition_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

/// Optimize `model.params` in place.
///
/// `condition` supplies a raw property value per training molecule (the
/// conditional case); values are normalized with training-split statistics
/// before entering the network. `on_improved` fires after every validation
/// evaluation that improves on the best seen so far.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut EdmModel,
    train_mols: &[Molecule],
    condition: Option<&[f64]>,
    val: Option<(&[Molecule], Option<&[f64]>)>,
    opts: &TrainOptions,
    mut on_improved: impl FnMut(&EdmModel, &AdamState, usize, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_mols.is_empty() {
        return Err(EdmError::EmptyInput("training set is empty".into()));
    }
    if let Some(cond) = condition {
        assert_eq!(cond.len(), train_mols.len(), "one condition value per molecule");
    }
    let cond_stats = condition.map(condition_stats);
    let normalize = |raw: f64| {
        let (mean, std) = cond_stats.unwrap();
        (raw - mean) / std
    };

    let sizes = SizeDistribution::fit(train_mols)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let val_seed = opts.seed.wrapping_add(0x76616c); // fixed stream so epochs compare
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut best_val: Option<f64> = None;
    let mut step = 0usize;
    let t_max = model.schedule.t_max();

    'epochs: for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train_mols.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            model.params.zero_grads();
            let mut g = Graph::new();
            let mut total = None;
            for &idx in batch {
                let t = match opts.weighting {
                    LossWeighting::Simplified => rng.gen_range(0..=t_max),
                    LossWeighting::Variational => rng.gen_range(1..=t_max),
                };
                let mol;
                let mol_ref = if opts.augment_rotations {
                    let r = geometry::random_orthogonal(&mut rng, true);
                    let rotated = geometry::apply_orthogonal(&r, &train_mols[idx].positions);
                    mol = Molecule::new(
                        rotated,
                        train_mols[idx].types.clone(),
                        train_mols[idx].charges.clone(),
                        train_mols[idx].n_types,
                    );
                    &mol
                } else {
                    &train_mols[idx]
                };
                let c = condition.map(|cond| normalize(cond[idx]));
                let loss = model.loss_node(&mut g, mol_ref, t, opts.weighting, &mut rng, c)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => g.add(acc, loss),
                });
            }
            let total = total.unwrap();
            let batch_loss = g.scale(total, 1.0 / batch.len() as f64);
            let loss_value = g.scalar(batch_loss);
            if !loss_value.is_finite() {
                return Err(EdmError::Numerical(format!(
                    "training loss became non-finite at step {step} (lr = {})",
                    opts.lr
                )));
            }
            g.backward(batch_loss)?;
            g.accumulate_param_grads(&mut model.params);
            adam_step(&mut model.params, &mut adam, opts.lr, opts.betas, opts.adam_eps)?;
            step += 1;
            log.push(LogRow { step, epoch, train_loss: loss_value, val_nll: None });
            if opts.max_steps.is_some_and(|cap| step >= cap) {
                break 'epochs;
            }
        }

        if let Some((val_mols, val_cond)) = val {
            let val_nll = validation_nll(model, val_mols, val_cond, cond_stats, &sizes, opts.val_cap, val_seed)?;
            if let Some(row) = log.last_mut() {
                row.val_nll = Some(val_nll);
            }
            if best_val.is_none_or(|b| val_nll < b) {
                best_val = Some(val_nll);
                on_improved(model, &adam, epoch, val_nll)?;
            }
        }
    }

    Ok(TrainOutcome { adam, log, best_val_nll: best_val, cond_stats })
}

fn validation_nll(
    model: &EdmModel,
    val_mols: &[Molecule],
    val_cond: Option<&[f64]>,
    cond_stats: Option<(f64, f64)>,
    sizes: &SizeDistribution,
    cap: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = val_mols.len().min(cap.max(1));
    let mut total = 0.0;
    for i in 0..n {
        let c = val_cond.map(|cond| {
            let (mean, std) = cond_stats.expect("conditional model requires training stats");
            (cond[i] - mean) / std
        });
        total += model.nll_estimate(&val_mols[i], sizes, c, &mut rng)?.nll;
    }
    Ok(total / n as f64)
}
