//! Run configuration: every knob of a training, evaluation or ablation run.
//! Stored as TOML on disk and as canonical JSON inside checkpoints.

use std::path::{Path, PathBuf};

use boostnet_autodiff::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalFrame;
use crate::model_config::ModelConfig;
use crate::polar::PolarGeometry;
use crate::synth::{sha256_hex, SynthParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub poly_power: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: SgdConfig::BASE_LR,
            poly_power: SgdConfig::POLY_POWER,
            weight_decay: SgdConfig::WEIGHT_DECAY,
            momentum: SgdConfig::MOMENTUM,
            max_grad_norm: 10.0,
        }
    }
}

impl OptimConfig {
    pub fn sgd(&self, total_iters: u64) -> SgdConfig {
        SgdConfig {
            base_lr: self.base_lr,
            poly_power: self.poly_power,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            total_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch interval between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Rescale backbone convs to unit output RMS on the first training batch
    /// before the first step.
    pub calibrate_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 30,
            checkpoint_every: 10,
            calibrate_init: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Average with the prediction on the angle-flipped polar image.
    pub tta: bool,
    pub frame: EvalFrame,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tta: true,
            frame: EvalFrame::Cartesian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub synth: SynthParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/synth"),
            n_train: 64,
            n_test: 64,
            synth: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Values of `M` trained for every seed.
    pub stages: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            stages: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub polar: PolarGeometry,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            polar: PolarGeometry::default(),
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full-scale settings: 640-pixel windows, batch 9, 200 epochs and a
    /// 325/325 split.
    pub fn full_scale() -> Self {
        let mut c = Self::default();
        c.train.batch_size = 9;
        c.train.epochs = 200;
        c.polar.window = 640;
        c.data.n_train = 325;
        c.data.n_test = 325;
        c.data.synth.size = 640;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.polar.validate()?;
        self.augment.validate()?;
        self.data.synth.validate()?;
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        let o = &self.optim;
        let finite = [o.base_lr, o.poly_power, o.weight_decay, o.momentum, o.max_grad_norm].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite || o.momentum >= 1.0 {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        let s = self.model.heads.output_stride;
        if self.polar.angles % s != 0 || self.polar.radii % s != 0 {
            return Err(Error::Config(format!(
                "polar size {}x{} must be divisible by the output stride {s}",
                self.polar.angles, self.polar.radii
            )));
        }
        if self.ablation.stages.iter().any(|&m| m > crate::model_config::MAX_STAGES) {
            return Err(Error::Config("ablation stages must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical JSON used for checkpoints and provenance.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("embedded config: {e}")))
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn iterations_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.train.batch_size)
    }
}

/// Dotted paths of leaf values that differ between two configurations.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(ma), serde_json::Value::Object(mb)) => {
                let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let null = serde_json::Value::Null;
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&path, ma.get(k).unwrap_or(&null), mb.get(k).unwrap_or(&null), out);
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let (ja, jb) = (serde_json::to_value(a).expect("json"), serde_json::to_value(b).expect("json"));
    let mut out = Vec::new();
    walk("", &ja, &jb, &mut out);
    out
}
