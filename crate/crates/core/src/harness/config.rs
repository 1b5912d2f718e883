use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{PfaSchedule, TrainConfig};
use crate::datasynth::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::rng::fnv1a64;
use crate::numerics::{AdamWConfig, StepLr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Normal versus any defect.
    Binary,
    Multi,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multi => "multi",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multi" => Ok(Task::Multi),
            other => Err(Error::Config(format!("unknown task {other:?}, expected binary or multi"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub fusion_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        OptimConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            decay_factor: 0.75,
            decay_interval: 15,
            batch_size: 10,
            fusion_epochs: 60,
        }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn fusion_lr(&self) -> StepLr {
        StepLr {
            base: self.lr,
            factor: self.decay_factor,
            interval: self.decay_interval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSourceKind {
    Surrogate,
    /// Remote endpoint, falling back to the surrogate on failure unless
    /// `strict` is set.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub source: TextSourceKind,
    pub endpoint: Option<String>,
    pub strict: bool,
    pub max_in_flight: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            source: TextSourceKind::Surrogate,
            endpoint: None,
            strict: false,
            max_in_flight: 4,
        }
    }
}

/// Everything a run depends on. Loaded from TOML; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    /// Existing dataset directory; synthesized from `synth` when absent.
    pub dataset: Option<PathBuf>,
    /// Refuse anything that could make outputs depend on the environment,
    /// such as a remote text source.
    pub deterministic: bool,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub schedule: PfaSchedule,
    pub optim: OptimConfig,
    pub text: TextConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            task: Task::Multi,
            dataset: None,
            deterministic: true,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            schedule: PfaSchedule::default(),
            optim: OptimConfig::default(),
            text: TextConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate(self.model.classes)?;
        self.model.validate()?;
        self.schedule.validate()?;
        if self.model.canvas != self.synth.canvas {
            return Err(Error::Config(format!(
                "model.canvas {} differs from synth.canvas {}",
                self.model.canvas, self.synth.canvas
            )));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return Err(Error::Config("optim.lr and optim.eps must be positive, weight_decay nonnegative".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("optim betas must lie in [0, 1)".into()));
        }
        if o.batch_size == 0 || o.decay_interval == 0 || !(o.decay_factor > 0.0) {
            return Err(Error::Config("optim.batch_size, decay_interval and decay_factor must be positive".into()));
        }
        if self.text.source == TextSourceKind::Remote && self.deterministic {
            return Err(Error::Config("a remote text source needs deterministic = false".into()));
        }
        Ok(())
    }

    /// FNV-1a over the canonical TOML rendering, as 16 hex digits.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_toml().as_bytes()))
    }

    /// First line of every output file.
    pub fn header(&self) -> String {
        format!("seed={} config_hash={}", self.seed, self.hash())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.adamw(),
            batch_size: self.optim.batch_size,
            seed: self.seed,
            fusion_epochs: self.optim.fusion_epochs,
            decay_factor: self.optim.decay_factor,
            decay_interval: self.optim.decay_interval,
        }
    }

    /// Same config with every seed-dependent part moved to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig { seed, ..self.clone() }
    }
}
