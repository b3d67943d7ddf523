//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use dign_core::corruptions::{CorruptionKind, SeverityTables, SEVERITIES};
use dign_core::datasets::{generate_synth, split, Dataset, SynthSpec};
use dign_core::metrics::EvalConfig;
use dign_core::models::ModelSpec;
use dign_core::training::{AttackConfig, Method, Norm, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::idx;

pub const PAPER_DEFAULTS: &str = "paper-defaults";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Standard,
    Dign,
    DignWocr,
    Rse,
    At,
    Trades,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Standard => Method::Standard,
            MethodName::Dign => Method::Dign,
            MethodName::DignWocr => Method::DignWoCr,
            MethodName::Rse => Method::Rse,
            MethodName::At => Method::At,
            MethodName::Trades => Method::Trades,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormName {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Mlp6432,
    TinyCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Gaussian,
    Shot,
    Impulse,
    Speckle,
}

impl From<KindName> for CorruptionKind {
    fn from(k: KindName) -> Self {
        match k {
            KindName::Gaussian => CorruptionKind::Gaussian,
            KindName::Shot => CorruptionKind::Shot,
            KindName::Impulse => CorruptionKind::Impulse,
            KindName::Speckle => CorruptionKind::Speckle,
        }
    }
}

impl From<CorruptionKind> for KindName {
    fn from(k: CorruptionKind) -> Self {
        match k {
            CorruptionKind::Gaussian => KindName::Gaussian,
            CorruptionKind::Shot => KindName::Shot,
            CorruptionKind::Impulse => KindName::Impulse,
            CorruptionKind::Speckle => KindName::Speckle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthBlock {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthBlock {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            classes: s.classes,
            height: s.height,
            width: s.width,
            train_per_class: s.train_per_class,
            val_per_class: s.val_per_class,
            test_per_class: s.test_per_class,
            jitter: s.jitter,
            seed: s.seed,
        }
    }
}

impl SynthBlock {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            height: self.height,
            width: self.width,
            train_per_class: self.train_per_class,
            val_per_class: self.val_per_class,
            test_per_class: self.test_per_class,
            jitter: self.jitter,
            seed: self.seed,
        }
    }
}

/// MNIST-style files; validation is carved out of the training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxBlock {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synth(SynthBlock),
    Idx(IdxBlock),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth(SynthBlock::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: NormName,
}

impl Default for AttackBlock {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            epsilon: a.epsilon,
            steps: a.steps,
            step_size: a.step_size,
            norm: NormName::Linf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub method: MethodName,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub sigma_max: f64,
    pub n_samples: usize,
    pub rse_sigma: f64,
    pub rse_ensemble_n: usize,
    pub attack: AttackBlock,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            method: MethodName::Standard,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_every: t.lr_decay_every,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            lambda: t.lambda,
            sigma_max: t.sigma_max,
            n_samples: t.n_samples,
            rse_sigma: t.rse_sigma,
            rse_ensemble_n: t.rse_ensemble_n,
            attack: AttackBlock::default(),
        }
    }
}

impl TrainBlock {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.method.into(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_init: self.lr_init,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every: self.lr_decay_every,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            sigma_max: self.sigma_max,
            n_samples: self.n_samples,
            rse_sigma: self.rse_sigma,
            rse_ensemble_n: self.rse_ensemble_n,
            attack: AttackConfig {
                epsilon: self.attack.epsilon,
                steps: self.attack.steps,
                step_size: self.attack.step_size,
                norm: match self.attack.norm {
                    NormName::L2 => Norm::L2,
                    NormName::Linf => Norm::Linf,
                },
            },
            seed,
        }
    }
}

/// Per-kind table replacements; omitted kinds keep the built-in row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TablesBlock {
    pub gaussian: Option<[f64; SEVERITIES]>,
    pub shot: Option<[f64; SEVERITIES]>,
    pub impulse: Option<[f64; SEVERITIES]>,
    pub speckle: Option<[f64; SEVERITIES]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionBlock {
    pub kinds: Vec<KindName>,
    pub noise_kinds: Vec<KindName>,
    pub tables: TablesBlock,
}

impl Default for CorruptionBlock {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::ALL.iter().map(|&k| k.into()).collect(),
            noise_kinds: CorruptionKind::NOISE.iter().map(|&k| k.into()).collect(),
            tables: TablesBlock::default(),
        }
    }
}

impl CorruptionBlock {
    pub fn tables(&self) -> SeverityTables {
        let mut t = SeverityTables::default();
        let rows = [
            (CorruptionKind::Gaussian, self.tables.gaussian),
            (CorruptionKind::Shot, self.tables.shot),
            (CorruptionKind::Impulse, self.tables.impulse),
            (CorruptionKind::Speckle, self.tables.speckle),
        ];
        for (kind, row) in rows {
            if let Some(r) = row {
                *t.get_mut(kind) = r;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsBlock {
    pub n_bins: usize,
}

impl Default for MetricsBlock {
    fn default() -> Self {
        Self {
            n_bins: dign_core::metrics::DEFAULT_BINS,
        }
    }
}

/// Grid axes; an omitted axis holds the `train` block's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub lambda: Vec<f64>,
    pub sigma_max: Vec<f64>,
    pub n_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    /// Test inputs per check.
    pub inputs: usize,
    pub mc_draws: usize,
    pub sigma: f64,
    pub sigma_max: f64,
    /// Inputs below this `Tr(G)` are skipped by the KL expectation checks.
    pub min_trace: f64,
    pub surrogate_deltas: usize,
    pub delta_radius: f64,
    pub seed: u64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            inputs: 5,
            mc_draws: 20_000,
            sigma: 1e-2,
            sigma_max: 1e-2,
            min_trace: 1e-3,
            surrogate_deltas: 10_000,
            delta_radius: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelName,
    pub train: TrainBlock,
    pub corruptions: CorruptionBlock,
    pub metrics: MetricsBlock,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepBlock>,
    pub verify: VerifyBlock,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelName::Mlp6432,
            train: TrainBlock::default(),
            corruptions: CorruptionBlock::default(),
            metrics: MetricsBlock::default(),
            seeds: vec![0, 1, 2],
            sweep: None,
            verify: VerifyBlock::default(),
            output_dir: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Overwrites the method hyperparameters with the published settings.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        if name != PAPER_DEFAULTS {
            return Err(invalid(format!("unknown preset {name:?}")));
        }
        let d = TrainBlock::default();
        self.train.lambda = 0.2;
        self.train.sigma_max = 0.2;
        self.train.n_samples = 3;
        self.train.attack = AttackBlock::default();
        self.train.rse_sigma = d.rse_sigma;
        self.train.rse_ensemble_n = d.rse_ensemble_n;
        Ok(())
    }

    /// SHA-256 of the compact JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn model_spec(&self, input_shape: [usize; 3], classes: usize) -> ModelSpec {
        match self.model {
            ModelName::Mlp6432 => ModelSpec::mlp_64_32(input_shape, classes),
            ModelName::TinyCnn => ModelSpec::tiny_cnn(input_shape, classes),
        }
    }

    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            kinds: self.corruptions.kinds.iter().map(|&k| k.into()).collect(),
            noise_kinds: self.corruptions.noise_kinds.iter().map(|&k| k.into()).collect(),
            tables: self.corruptions.tables(),
            n_bins: self.metrics.n_bins,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        match &self.dataset {
            DatasetConfig::Synth(s) => s.spec().validate()?,
            DatasetConfig::Idx(b) => {
                if !(b.val_fraction > 0.0 && b.val_fraction < 1.0) {
                    return Err(invalid("val_fraction must be in (0, 1)"));
                }
            }
        }
        self.train.config(0).validate()?;
        self.eval_config(0).validate()?;
        let mut kinds = self.corruptions.kinds.clone();
        kinds.sort_by_key(|&k| CorruptionKind::from(k));
        kinds.dedup();
        if kinds.len() != self.corruptions.kinds.len() {
            return Err(invalid("corruption kinds must be distinct"));
        }
        if let Some(s) = &self.sweep {
            if s.lambda.is_empty() && s.sigma_max.is_empty() && s.n_samples.is_empty() {
                return Err(invalid("sweep grid is empty"));
            }
            for (i, p) in self.sweep_grid().iter().enumerate() {
                let mut t = self.train.clone();
                (t.lambda, t.sigma_max, t.n_samples) = *p;
                t.config(0)
                    .validate()
                    .map_err(|e| invalid(format!("sweep point {i}: {e}")))?;
            }
        }
        let v = &self.verify;
        if v.inputs == 0 || v.mc_draws == 0 || v.surrogate_deltas == 0 {
            return Err(invalid("verify counts must be >= 1"));
        }
        if !(v.sigma >= 0.0 && v.sigma_max >= 0.0 && v.delta_radius > 0.0 && v.min_trace >= 0.0) {
            return Err(invalid("verify scales must be non-negative (delta_radius positive)"));
        }
        Ok(())
    }

    /// Sorted `(lambda, sigma_max, n_samples)` grid points.
    pub fn sweep_grid(&self) -> Vec<(f64, f64, usize)> {
        let Some(s) = &self.sweep else {
            return Vec::new();
        };
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let lambdas = or(&s.lambda, self.train.lambda);
        let sigmas = or(&s.sigma_max, self.train.sigma_max);
        let ns = if s.n_samples.is_empty() {
            vec![self.train.n_samples]
        } else {
            s.n_samples.clone()
        };
        let mut grid = Vec::new();
        for &l in &lambdas {
            for &sm in &sigmas {
                for &n in &ns {
                    grid.push((l, sm, n));
                }
            }
        }
        grid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        grid.dedup();
        grid
    }

    /// `(train, val, test)`.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset, Dataset)> {
        match &self.dataset {
            DatasetConfig::Synth(s) => Ok(generate_synth(&s.spec())?),
            DatasetConfig::Idx(b) => {
                let full = idx::load_idx(&b.train_images, &b.train_labels)?;
                let test = idx::load_idx(&b.test_images, &b.test_labels)?;
                let mut parts = split(&full, &[b.val_fraction, 1.0 - b.val_fraction], b.split_seed, true)?;
                let train = parts.pop().expect("two parts");
                let val = parts.pop().expect("two parts");
                Ok((train, val, test))
            }
        }
    }
}
