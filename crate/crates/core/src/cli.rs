//! Operator surface: train / sample / eval / nll / interpolate subcommands,
//! self-describing checkpoints, and report plumbing.
//!
//! Every subcommand is deterministic under a fixed seed. Flags mirror
//! config keys with a `--` prefix and override file values. Exit codes:
//! 0 ok, 2 config/IO error, 3 numerical failure, 4 contract violation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{load_checkpoint, save_checkpoint, AdamState, Checkpoint};
use crate::chem::{self, BondTables};
use crate::config::{RawConfig, RunConfig};
use crate::dataio::{self, Dataset, ANGSTROM_TO_PM};
use crate::diffusion::{
    train, ConditionDistribution, DecodeMode, EdmModel, LoggedNoise, SizeDistribution,
    TrainOptions,
};
use crate::egnn::{self, DynamicsConfig};
use crate::error::{EdmError, Result};
use crate::schedule::NoiseSchedule;

/// Conditioning metadata stored with a conditional model.
#[derive(Debug, Clone, PartialEq)]
pub struct CondInfo {
    pub property: String,
    pub dist: ConditionDistribution,
    pub mean: f64,
    pub std: f64,
}

/// A checkpointed model together with everything sampling needs: the
/// vocabulary, size distribution, and conditional distribution when
/// present. No external config is required to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: EdmModel,
    pub adam: AdamState,
    pub vocab: Vec<String>,
    pub sizes: SizeDistribution,
    pub cond: Option<CondInfo>,
}

impl ModelBundle {
    pub fn normalized_condition(&self, raw: f64) -> Result<f64> {
        let cond = self.cond.as_ref().ok_or_else(|| {
            EdmError::Contract("this checkpoint was trained unconditionally".into())
        })?;
        Ok((raw - cond.mean) / cond.std)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = String::new();
        let model = &self.model;
        let _ = writeln!(meta, "model.n_layers = {}", model.dynamics.n_layers);
        let _ = writeln!(meta, "model.nf = {}", model.dynamics.nf);
        let _ = writeln!(meta, "model.equivariant = {}", model.dynamics.equivariant);
        let _ = writeln!(meta, "model.include_charges = {}", model.include_charges);
        let _ = writeln!(meta, "schedule.T = {}", model.schedule.t_max());
        let _ = writeln!(meta, "schedule.s = {}", model.schedule.precision());
        let _ = writeln!(meta, "scaling.x = {}", model.scaling.x);
        let _ = writeln!(meta, "scaling.onehot = {}", model.scaling.onehot);
        let _ = writeln!(meta, "scaling.charge = {}", model.scaling.charge);
        let _ = writeln!(meta, "data.vocabulary = {}", self.vocab.join(","));
        let _ = writeln!(meta, "sizes.support = {}", join(self.sizes.sizes().iter()));
        let _ = writeln!(meta, "sizes.probs = {}", join(self.sizes.probs().iter()));
        if let Some(cond) = &self.cond {
            let (lo, hi) = cond.dist.range();
            let _ = writeln!(meta, "model.conditioning = {}", cond.property);
            let _ = writeln!(meta, "cond.lo = {lo}");
            let _ = writeln!(meta, "cond.hi = {hi}");
            let _ = writeln!(meta, "cond.n_bins = {}", cond.dist.n_bins());
            let _ = writeln!(meta, "cond.sizes = {}", join(cond.dist.sizes().iter()));
            let _ = writeln!(meta, "cond.probs = {}", join(cond.dist.probs().iter()));
            let _ = writeln!(meta, "cond.mean = {}", cond.mean);
            let _ = writeln!(meta, "cond.std = {}", cond.std);
        }
        Checkpoint { params: self.model.params.clone(), adam: self.adam.clone(), metadata: meta }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<ModelBundle> {
        let meta = RawConfig::parse(&ckpt.metadata)?;
        let need = |key: &str| {
            meta.get(key)
                .ok_or_else(|| EdmError::Checkpoint(format!("metadata key `{key}` missing")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            need(key)?
                .parse()
                .map_err(|_| EdmError::Checkpoint(format!("metadata key `{key}` is not a number")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            need(key)?
                .parse()
                .map_err(|_| EdmError::Checkpoint(format!("metadata key `{key}` is not an integer")))
        };
        let vocab: Vec<String> = need("data.vocabulary")?.split(',').map(str::to_string).collect();
        let include_charges: bool = need("model.include_charges")?
            .parse()
            .map_err(|_| EdmError::Checkpoint("bad model.include_charges".into()))?;
        let equivariant: bool = need("model.equivariant")?
            .parse()
            .map_err(|_| EdmError::Checkpoint("bad model.equivariant".into()))?;
        let conditioning = meta.get("model.conditioning").map(str::to_string);
        let dynamics = DynamicsConfig {
            n_layers: parse_usize("model.n_layers")?,
            nf: parse_usize("model.nf")?,
            feature_dim: crate::diffusion::feature_dim(vocab.len(), include_charges),
            conditioning_dim: usize::from(conditioning.is_some()),
            equivariant,
        };
        let schedule = NoiseSchedule::polynomial(parse_usize("schedule.T")?, parse_f64("schedule.s")?)?;
        let scaling = crate::diffusion::ScalingSpec {
            x: parse_f64("scaling.x")?,
            onehot: parse_f64("scaling.onehot")?,
            charge: parse_f64("scaling.charge")?,
        };
        let sizes = SizeDistribution::from_parts(
            split_list(need("sizes.support")?)?,
            split_list(need("sizes.probs")?)?,
        )?;
        let cond = match conditioning {
            None => None,
            Some(property) => Some(CondInfo {
                property,
                dist: ConditionDistribution::from_parts(
                    parse_f64("cond.lo")?,
                    parse_f64("cond.hi")?,
                    parse_usize("cond.n_bins")?,
                    split_list(need("cond.sizes")?)?,
                    split_list(need("cond.probs")?)?,
                )?,
                mean: parse_f64("cond.mean")?,
                std: parse_f64("cond.std")?,
            }),
        };
        Ok(ModelBundle {
            model: EdmModel {
                params: ckpt.params,
                dynamics,
                schedule,
                scaling,
                include_charges,
            },
            adam: ckpt.adam,
            vocab,
            sizes,
            cond,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        save_checkpoint(&mut bytes, &self.to_checkpoint())?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let bytes = fs::read(path)?;
        ModelBundle::from_checkpoint(load_checkpoint(&mut bytes.as_slice())?)
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn split_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| EdmError::Checkpoint(format!("bad list element `{tok}`")))
        })
        .collect()
}

/// Write via a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp.partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ── Argument handling ───────────────────────────────────────────────────

/// `--key value` pairs after the subcommand.
pub struct Args {
    flags: BTreeMap<String, String>,
}

impl Args {
    pub fn parse(argv: &[String]) -> Result<Args> {
        let mut flags = BTreeMap::new();
        let mut i = 0;
        while i < argv.len() {
            let key = argv[i]
                .strip_prefix("--")
                .ok_or_else(|| EdmError::Contract(format!("expected `--key value`, got `{}`", argv[i])))?;
            let value = argv.get(i + 1).ok_or_else(|| {
                EdmError::Contract(format!("flag `--{key}` is missing its value"))
            })?;
            flags.insert(key.to_string(), value.clone());
            i += 2;
        }
        Ok(Args { flags })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.flags.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| EdmError::Config(vec![format!("flag `--{key}` is required")]))
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| EdmError::Config(vec![format!("flag `--{key}`: cannot parse `{v}`")])),
        }
    }

    /// Remaining flags become config overrides.
    fn into_overrides(self, raw: &mut RawConfig) {
        for (k, v) in self.flags {
            raw.set(&k, &v);
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let result = dispatch(argv);
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

pub fn exit_code(err: &EdmError) -> i32 {
    match err {
        EdmError::Numerical(_) => 3,
        EdmError::Contract(_) | EdmError::CogViolation { .. } => 4,
        _ => 2,
    }
}

fn dispatch(argv: &[String]) -> Result<()> {
    let Some(command) = argv.first() else {
        return Err(EdmError::Config(vec![usage()]));
    };
    let mut args = Args::parse(&argv[1..])?;
    match command.as_str() {
        "train" => cmd_train(&mut args),
        "sample" => cmd_sample(&mut args),
        "eval" => cmd_eval(&mut args),
        "nll" => cmd_nll(&mut args),
        "interpolate" => cmd_interpolate(&mut args),
        other => Err(EdmError::Config(vec![format!("unknown subcommand `{other}`"), usage()])),
    }
}

fn usage() -> String {
    "usage: edm <train|sample|eval|nll|interpolate> [--key value ...]".into()
}

// ── train ───────────────────────────────────────────────────────────────

pub fn cmd_train(args: &mut Args) -> Result<()> {
    let config_path = args.require("config")?;
    let text = fs::read_to_string(&config_path)?;
    let mut raw = RawConfig::parse(&text)?;
    std::mem::take(args).into_overrides(&mut raw);
    let cfg = RunConfig::from_raw(&raw)?;
    cfg.validate_for_train()?;
    train_from_config(&cfg).map(|_| ())
}

/// Full training run driven by a validated config; returns the bundle that
/// was written as the final checkpoint.
pub fn train_from_config(cfg: &RunConfig) -> Result<ModelBundle> {
    let train_path = cfg.train_path.as_ref().expect("validated");
    let text = fs::read_to_string(train_path)?;
    let full = dataio::parse_extended_xyz(&text, cfg.vocabulary.as_deref())?;
    if full.is_empty() {
        return Err(EdmError::EmptyInput(format!("no molecules in `{}`", train_path.display())));
    }
    let full = dataio::center_dataset(&full);

    let (train_set, val_set) = if let Some(split_path) = &cfg.split_file {
        let split_text = fs::read_to_string(split_path)?;
        let (tr, va, _te) = dataio::split_index_file(&full, &split_text)?;
        (tr, va)
    } else if let Some(fracs) = cfg.split_fractions {
        let (tr, va, _te) = dataio::split_fractions(&full, fracs, cfg.seed)?;
        (tr, va)
    } else if let Some(val_path) = &cfg.val_path {
        let val_text = fs::read_to_string(val_path)?;
        let va = dataio::parse_extended_xyz(&val_text, Some(&full.vocab))?;
        (full.clone(), dataio::center_dataset(&va))
    } else {
        (full.clone(), Dataset::default())
    };
    if train_set.is_empty() {
        return Err(EdmError::EmptyInput("training split is empty".into()));
    }

    let condition_values = match &cfg.conditioning {
        None => None,
        Some(prop) => Some(train_set.property_column(prop).ok_or_else(|| {
            EdmError::Config(vec![format!(
                "conditioning property `{prop}` is missing from some training molecules"
            )])
        })?),
    };
    let val_condition = match (&cfg.conditioning, val_set.is_empty()) {
        (Some(prop), false) => Some(val_set.property_column(prop).ok_or_else(|| {
            EdmError::Config(vec![format!(
                "conditioning property `{prop}` is missing from some validation molecules"
            )])
        })?),
        _ => None,
    };

    let dynamics = DynamicsConfig {
        n_layers: cfg.n_layers,
        nf: cfg.nf,
        feature_dim: crate::diffusion::feature_dim(train_set.vocab.len(), cfg.include_charges),
        conditioning_dim: usize::from(cfg.conditioning.is_some()),
        equivariant: cfg.equivariant,
    };
    let schedule = NoiseSchedule::polynomial(cfg.t_max, cfg.s)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = EdmModel {
        params: egnn::init_params(&dynamics, &mut rng),
        dynamics,
        schedule,
        scaling: cfg.scaling,
        include_charges: cfg.include_charges,
    };
    model.validate()?;

    let sizes = SizeDistribution::fit(&train_set.molecules)?;
    let cond_dist = match (&cfg.conditioning, &condition_values) {
        (Some(_), Some(values)) => {
            Some(ConditionDistribution::fit(&train_set.molecules, values, cfg.condition_bins)?)
        }
        _ => None,
    };

    let opts = TrainOptions {
        lr: cfg.lr,
        batch_size: cfg.batch,
        epochs: cfg.epochs,
        max_steps: cfg.max_steps,
        augment_rotations: cfg.augment_rotations,
        seed: cfg.seed,
        ..TrainOptions::default()
    };
    let val_ref = if val_set.is_empty() {
        None
    } else {
        Some((val_set.molecules.as_slice(), val_condition.as_deref()))
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let best_path = cfg.out_dir.join("checkpoint_best.edm");
    let vocab = train_set.vocab.clone();
    let make_bundle = |model: &EdmModel, adam: &AdamState, cond_stats: Option<(f64, f64)>| ModelBundle {
        model: model.clone(),
        adam: adam.clone(),
        vocab: vocab.clone(),
        sizes: sizes.clone(),
        cond: match (&cfg.conditioning, &cond_dist, cond_stats) {
            (Some(prop), Some(dist), Some((mean, std))) => Some(CondInfo {
                property: prop.clone(),
                dist: dist.clone(),
                mean,
                std,
            }),
            _ => None,
        },
    };

    let cond_stats_for_ckpt = condition_values.as_deref().map(crate::diffusion::condition_stats);
    let outcome = train(
        &mut model,
        &train_set.molecules,
        condition_values.as_deref(),
        val_ref,
        &opts,
        |model, adam, epoch, val_nll| {
            let bundle = make_bundle(model, adam, cond_stats_for_ckpt);
            bundle.save(&best_path)?;
            eprintln!("epoch {epoch}: val nll improved to {val_nll:.4}, checkpoint saved");
            Ok(())
        },
    )?;

    let mut csv = String::from("step,epoch,train_loss,val_nll\n");
    for row in &outcome.log {
        let val = row.val_nll.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", row.step, row.epoch, row.train_loss, val);
    }
    write_atomic(&cfg.out_dir.join("loss_log.csv"), csv.as_bytes())?;

    let bundle = make_bundle(&model, &outcome.adam, outcome.cond_stats);
    bundle.save(&cfg.out_dir.join("checkpoint_final.edm"))?;
    Ok(bundle)
}

// ── sample ──────────────────────────────────────────────────────────────

pub fn cmd_sample(args: &mut Args) -> Result<()> {
    let checkpoint = PathBuf::from(args.require("checkpoint")?);
    let out = PathBuf::from(args.require("out")?);
    let n: usize = args.take_parsed("n", 10)?;
    let seed: u64 = args.take_parsed("seed", 0)?;
    let condition = args.take("condition");
    let mode = parse_mode(args)?;

    let bundle = ModelBundle::load(&checkpoint)?;
    let dataset = sample_dataset(&bundle, n, seed, condition.as_deref(), mode)?;
    write_atomic(&out, dataio::emit_extended_xyz(&dataset).as_bytes())?;
    Ok(())
}

fn parse_mode(args: &mut Args) -> Result<DecodeMode> {
    match args.take("decode").as_deref() {
        None | Some("sample") => Ok(DecodeMode::Sample),
        Some("mode") => Ok(DecodeMode::Mode),
        Some(other) => {
            Err(EdmError::Config(vec![format!("flag `--decode`: expected sample|mode, got `{other}`")]))
        }
    }
}

/// Draw `n` molecules. `condition` is `None` (unconditional), `"auto"`
/// (draw `(c, M)` jointly), or an explicit property value (sizes then come
/// from `p(M | bin(c))`).
pub fn sample_dataset(
    bundle: &ModelBundle,
    n: usize,
    seed: u64,
    condition: Option<&str>,
    mode: DecodeMode,
) -> Result<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut molecules = Vec::with_capacity(n);
    let mut properties = Vec::with_capacity(n);
    for _ in 0..n {
        let (c_raw, m) = match condition {
            None => {
                if bundle.cond.is_some() {
                    // A conditional model has no unconditional sampling path.
                    return Err(EdmError::Contract(
                        "checkpoint is conditional; pass --condition <value>|auto".into(),
                    ));
                }
                (None, bundle.sizes.sample(&mut rng))
            }
            Some("auto") => {
                let cond = bundle.cond.as_ref().ok_or_else(|| {
                    EdmError::Contract("conditional sampling from an unconditional checkpoint".into())
                })?;
                let (c, m) = cond.dist.sample(&mut rng);
                (Some(c), m)
            }
            Some(value) => {
                let c: f64 = value.parse().map_err(|_| {
                    EdmError::Config(vec![format!("flag `--condition`: expected a number or `auto`, got `{value}`")])
                })?;
                let cond = bundle.cond.as_ref().ok_or_else(|| {
                    EdmError::Contract("conditional sampling from an unconditional checkpoint".into())
                })?;
                (Some(c), cond.dist.sample_size_given(c, &mut rng)?)
            }
        };
        let c_norm = c_raw.map(|c| bundle.normalized_condition(c)).transpose()?;
        let mut decode_rng = ChaCha20Rng::seed_from_u64(rng.gen());
        let mol = bundle.model.sample_molecule(m, &mut rng, &mut decode_rng, c_norm, mode)?;
        let mut props = BTreeMap::new();
        if let (Some(c), Some(cond)) = (c_raw, &bundle.cond) {
            props.insert(cond.property.clone(), c);
        }
        molecules.push(mol);
        properties.push(props);
    }
    Ok(Dataset { molecules, properties, vocab: bundle.vocab.clone() })
}

// ── eval ────────────────────────────────────────────────────────────────

pub fn cmd_eval(args: &mut Args) -> Result<()> {
    let molecules = PathBuf::from(args.require("molecules")?);
    let reference = args.take("reference").map(PathBuf::from);
    let out = args.take("out").map(PathBuf::from);

    let text = fs::read_to_string(&molecules)?;
    let dataset = dataio::parse_extended_xyz(&text, None)?;
    let reference = match reference {
        None => None,
        Some(p) => Some(dataio::parse_extended_xyz(&fs::read_to_string(p)?, None)?),
    };
    let report = eval_report(&dataset, reference.as_ref())?;
    match out {
        Some(p) => write_atomic(&p, report.as_bytes())?,
        None => print!("{report}"),
    }
    Ok(())
}

/// Stability, uniqueness, and distribution metrics as a line-oriented
/// report with a stable format.
pub fn eval_report(dataset: &Dataset, reference: Option<&Dataset>) -> Result<String> {
    let tables = BondTables::default();
    let mut atoms_total = 0usize;
    let mut atoms_stable = 0usize;
    let mut mols_stable = 0usize;
    let mut graphs = Vec::with_capacity(dataset.len());
    for mol in &dataset.molecules {
        let elements = dataset.elements(mol)?;
        let graph = chem::infer_bonds(&mol.positions, ANGSTROM_TO_PM, &elements, &tables);
        let report = chem::stability(&elements, &graph, &tables);
        atoms_total += mol.size();
        atoms_stable += report.atom_stable.iter().filter(|&&s| s).count();
        mols_stable += usize::from(report.molecule_stable);
        graphs.push((elements, graph));
    }
    let n = dataset.len().max(1);
    let mut out = String::new();
    let _ = writeln!(out, "molecules: {}", dataset.len());
    let _ = writeln!(out, "atom_stable_pct: {:.4}", 100.0 * atoms_stable as f64 / atoms_total.max(1) as f64);
    let _ = writeln!(out, "mol_stable_pct: {:.4}", 100.0 * mols_stable as f64 / n as f64);
    let _ = writeln!(out, "uniqueness_pct: {:.4}", 100.0 * chem::uniqueness_fraction(&graphs));
    if let Some(reference) = reference {
        let h_gen = chem::distance_histogram(&dataset.molecules, ANGSTROM_TO_PM);
        let h_ref = chem::distance_histogram(&reference.molecules, ANGSTROM_TO_PM);
        let _ = writeln!(out, "js_divergence: {:.6}", chem::js_divergence(&h_gen, &h_ref)?);
        for name in dataset.shared_property_names() {
            let (Some(a), Some(b)) =
                (dataset.property_column(&name), reference.property_column(&name))
            else {
                continue;
            };
            let _ = writeln!(out, "w1[{name}]: {:.6}", chem::wasserstein1(&a, &b)?);
        }
    }
    Ok(out)
}

// ── nll ─────────────────────────────────────────────────────────────────

pub fn cmd_nll(args: &mut Args) -> Result<()> {
    let checkpoint = PathBuf::from(args.require("checkpoint")?);
    let molecules = PathBuf::from(args.require("molecules")?);
    let estimates: usize = args.take_parsed("estimates", 1)?;
    let seed: u64 = args.take_parsed("seed", 0)?;
    let out = args.take("out").map(PathBuf::from);

    let bundle = ModelBundle::load(&checkpoint)?;
    let text = fs::read_to_string(&molecules)?;
    let dataset = dataio::parse_extended_xyz(&text, Some(&bundle.vocab))?;
    let report = nll_report(&bundle, &dataset, estimates, seed)?;
    match out {
        Some(p) => write_atomic(&p, report.as_bytes())?,
        None => print!("{report}"),
    }
    Ok(())
}

pub fn nll_report(bundle: &ModelBundle, dataset: &Dataset, estimates: usize, seed: u64) -> Result<String> {
    assert!(estimates >= 1, "need at least one estimate per molecule");
    let dataset = dataio::center_dataset(dataset);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = String::from("id, M, nll_total, L_base, L0_x, L0_h, T*Lt\n");
    let mut all = Vec::new();
    for (i, mol) in dataset.molecules.iter().enumerate() {
        let c_norm = match &bundle.cond {
            None => None,
            Some(cond) => {
                let raw = dataset.properties[i].get(&cond.property).copied().ok_or_else(|| {
                    EdmError::Contract(format!(
                        "molecule {i} lacks the conditioning property `{}`",
                        cond.property
                    ))
                })?;
                Some((raw - cond.mean) / cond.std)
            }
        };
        let mut sums = [0.0f64; 5];
        for _ in 0..estimates {
            let rec = bundle.model.nll_estimate(mol, &bundle.sizes, c_norm, &mut rng)?;
            if rec.log_p_m == f64::NEG_INFINITY {
                eprintln!(
                    "warning: molecule {i} has {} atoms, outside the size support; nll = +inf",
                    rec.m
                );
            }
            sums[0] += rec.nll;
            sums[1] += rec.l_base;
            sums[2] += rec.l0_x;
            sums[3] += rec.l0_h;
            sums[4] += rec.t_term;
            all.push(rec.nll);
        }
        let k = estimates as f64;
        let _ = writeln!(
            out,
            "{i}, {}, {}, {}, {}, {}, {}",
            mol.size(),
            sums[0] / k,
            sums[1] / k,
            sums[2] / k,
            sums[3] / k,
            sums[4] / k
        );
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = if all.len() > 1 {
        all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let se = (var / n).sqrt();
    let _ = writeln!(out, "mean_nll: {mean}");
    let _ = writeln!(out, "se_nll: {se}");
    Ok(out)
}

// ── interpolate ─────────────────────────────────────────────────────────

pub fn cmd_interpolate(args: &mut Args) -> Result<()> {
    let checkpoint = PathBuf::from(args.require("checkpoint")?);
    let from: f64 = args
        .require("from")?
        .parse()
        .map_err(|_| EdmError::Config(vec!["flag `--from`: expected a number".into()]))?;
    let to: f64 = args
        .require("to")?
        .parse()
        .map_err(|_| EdmError::Config(vec!["flag `--to`: expected a number".into()]))?;
    let steps: usize = args.take_parsed("steps", 9)?;
    let seed: u64 = args.take_parsed("seed", 0)?;
    let prefix = PathBuf::from(args.require("out-prefix")?);

    let bundle = ModelBundle::load(&checkpoint)?;
    interpolate_series(&bundle, from, to, steps, seed, &prefix)?;
    Ok(())
}

/// Sample one molecule per property value over a linear range, reusing the
/// identical per-step noise stream (shared seed) so the series varies only
/// through the condition. Writes one extended-XYZ file and one noise log
/// per step.
pub fn interpolate_series(
    bundle: &ModelBundle,
    from: f64,
    to: f64,
    steps: usize,
    seed: u64,
    prefix: &Path,
) -> Result<Vec<PathBuf>> {
    assert!(steps >= 1, "need at least one step");
    let cond = bundle.cond.as_ref().ok_or_else(|| {
        EdmError::Contract("interpolation requires a conditional checkpoint".into())
    })?;
    // One size for the whole series: only c may vary across outputs.
    let m = bundle.sizes.sample(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut written = Vec::new();
    for k in 0..steps {
        let c = if steps == 1 {
            from
        } else {
            from + (to - from) * k as f64 / (steps - 1) as f64
        };
        let c_norm = (c - cond.mean) / cond.std;
        let mut noise = LoggedNoise::new(ChaCha20Rng::seed_from_u64(seed));
        let z0 = bundle.model.sample_chain(m, &mut noise, Some(c_norm), |_| {})?;
        let mol = bundle.model.decode_z0(
            &z0,
            Some(c_norm),
            &mut ChaCha20Rng::seed_from_u64(seed.wrapping_add(1)),
            DecodeMode::Mode,
        )?;
        let mut props = BTreeMap::new();
        props.insert(cond.property.clone(), c);
        let dataset = Dataset {
            molecules: vec![mol],
            properties: vec![props],
            vocab: bundle.vocab.clone(),
        };
        let xyz_path = path_with_suffix(prefix, &format!("_step{k:03}.xyz"));
        write_atomic(&xyz_path, dataio::emit_extended_xyz(&dataset).as_bytes())?;
        let log_path = path_with_suffix(prefix, &format!("_step{k:03}.noiselog"));
        write_atomic(&log_path, (noise.log.join("\n") + "\n").as_bytes())?;
        written.push(xyz_path);
    }
    Ok(written)
}

fn path_with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

impl Default for Args {
    fn default() -> Self {
        Args { flags: BTreeMap::new() }
    }
}
