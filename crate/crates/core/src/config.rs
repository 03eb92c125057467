//! Run configuration: flat `key = value` text with dotted section prefixes,
//! CLI overrides, and exhaustive validation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::diffusion::ScalingSpec;
use crate::error::{EdmError, Result};

/// Raw key/value pairs from a config file plus any command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pairs: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut pairs = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| EdmError::Parse {
                line: lineno + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RawConfig { pairs })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.pairs.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.pairs.keys()
    }
}

/// Fully validated run configuration with documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_layers: usize,
    pub nf: usize,
    pub equivariant: bool,
    /// Property name used for conditional generation, when set.
    pub conditioning: Option<String>,
    pub t_max: usize,
    pub s: f64,
    pub scaling: ScalingSpec,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub augment_rotations: bool,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub split_fractions: Option<(f64, f64, f64)>,
    pub vocabulary: Option<Vec<String>>,
    pub include_charges: bool,
    pub condition_bins: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_layers: 9,
            nf: 256,
            equivariant: true,
            conditioning: None,
            t_max: 1000,
            s: 1e-5,
            scaling: ScalingSpec::default(),
            lr: 1e-4,
            batch: 64,
            epochs: 100,
            max_steps: None,
            augment_rotations: false,
            train_path: None,
            val_path: None,
            split_file: None,
            split_fractions: None,
            vocabulary: None,
            include_charges: true,
            condition_bins: 20,
            out_dir: PathBuf::from("edm_run"),
            seed: 0,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "model.n_layers",
    "model.nf",
    "model.equivariant",
    "model.conditioning",
    "schedule.T",
    "schedule.s",
    "scaling.x",
    "scaling.onehot",
    "scaling.charge",
    "optimizer.lr",
    "optimizer.batch",
    "optimizer.epochs",
    "optimizer.max_steps",
    "optimizer.augment_rotations",
    "data.train",
    "data.val",
    "data.split_file",
    "data.split_fractions",
    "data.vocabulary",
    "data.include_charges",
    "data.condition_bins",
    "train.out_dir",
    "seed",
];

impl RunConfig {
    /// Build from raw pairs, collecting every validation failure before
    /// reporting.
    pub fn from_raw(raw: &RawConfig) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();

        for key in raw.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                errors.push(format!("unknown config key `{key}`"));
            }
        }

        macro_rules! read {
            ($key:expr, $target:expr) => {
                if let Some(v) = raw.get($key) {
                    match v.parse() {
                        Ok(parsed) => $target = parsed,
                        Err(_) => errors.push(format!("`{}`: cannot parse `{v}`", $key)),
                    }
                }
            };
        }

        read!("model.n_layers", cfg.n_layers);
        read!("model.nf", cfg.nf);
        read!("model.equivariant", cfg.equivariant);
        if let Some(v) = raw.get("model.conditioning") {
            cfg.conditioning = (!v.is_empty()).then(|| v.to_string());
        }
        read!("schedule.T", cfg.t_max);
        read!("schedule.s", cfg.s);
        read!("scaling.x", cfg.scaling.x);
        read!("scaling.onehot", cfg.scaling.onehot);
        read!("scaling.charge", cfg.scaling.charge);
        read!("optimizer.lr", cfg.lr);
        read!("optimizer.batch", cfg.batch);
        read!("optimizer.epochs", cfg.epochs);
        if let Some(v) = raw.get("optimizer.max_steps") {
            match v.parse() {
                Ok(parsed) => cfg.max_steps = Some(parsed),
                Err(_) => errors.push(format!("`optimizer.max_steps`: cannot parse `{v}`")),
            }
        }
        read!("optimizer.augment_rotations", cfg.augment_rotations);
        if let Some(v) = raw.get("data.train") {
            cfg.train_path = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.get("data.val") {
            cfg.val_path = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.get("data.split_file") {
            cfg.split_file = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.get("data.split_fractions") {
            let parts: Vec<_> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
            match parts.as_slice() {
                [Ok(a), Ok(b), Ok(c)] => cfg.split_fractions = Some((*a, *b, *c)),
                _ => errors.push(format!(
                    "`data.split_fractions`: expected three comma-separated numbers, got `{v}`"
                )),
            }
        }
        if let Some(v) = raw.get("data.vocabulary") {
            cfg.vocabulary =
                Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
        }
        read!("data.include_charges", cfg.include_charges);
        read!("data.condition_bins", cfg.condition_bins);
        if let Some(v) = raw.get("train.out_dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        read!("seed", cfg.seed);

        if cfg.n_layers == 0 {
            errors.push("`model.n_layers` must be >= 1".into());
        }
        if cfg.nf == 0 {
            errors.push("`model.nf` must be >= 1".into());
        }
        if cfg.t_max == 0 {
            errors.push("`schedule.T` must be >= 1".into());
        }
        if !(cfg.s > 0.0 && cfg.s < 0.5) {
            errors.push(format!("`schedule.s` must lie in (0, 0.5), got {}", cfg.s));
        }
        if cfg.scaling.x <= 0.0 || cfg.scaling.onehot <= 0.0 || cfg.scaling.charge <= 0.0 {
            errors.push("all `scaling.*` values must be positive".into());
        }
        if cfg.batch == 0 {
            errors.push("`optimizer.batch` must be >= 1".into());
        }
        if cfg.condition_bins == 0 {
            errors.push("`data.condition_bins` must be >= 1".into());
        }

        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(EdmError::Config(errors))
        }
    }

    /// Checks that only make sense before a training run: referenced paths
    /// must exist.
    pub fn validate_for_train(&self) -> Result<()> {
        let mut errors = Vec::new();
        match &self.train_path {
            None => errors.push("`data.train` is required for training".into()),
            Some(p) => {
                if !p.exists() {
                    errors.push(format!("`data.train`: no such file `{}`", p.display()));
                }
            }
        }
        for (key, path) in [("data.val", &self.val_path), ("data.split_file", &self.split_file)] {
            if let Some(p) = path {
                if !p.exists() {
                    errors.push(format!("`{key}`: no such file `{}`", p.display()));
                }
            }
        }
        if self.val_path.is_some() && (self.split_file.is_some() || self.split_fractions.is_some()) {
            errors.push("`data.val` conflicts with `data.split_file`/`data.split_fractions`".into());
        }
        if self.split_file.is_some() && self.split_fractions.is_some() {
            errors.push("`data.split_file` conflicts with `data.split_fractions`".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(EdmError::Config(errors))
        }
    }
}
