//! Experiment configuration, read from TOML and echoed as a JSON manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::DatasetSource;
use crate::error::{Result, SsflError};
use crate::losses::DEFAULT_THRESHOLD;
use crate::model::{Architecture, InputShape, ModelSpec, NormKind, OptimizerConfig, DEFAULT_WEIGHT_SEED};
use crate::partitioner::DEFAULT_PARTITION_SEED;

pub use crate::losses::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    #[default]
    Mlp,
    TinyCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    None,
    BatchNorm,
    #[default]
    GroupNorm,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_channels() -> Vec<usize> {
    vec![16, 32]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub arch: ArchKind,
    /// MLP hidden widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Conv-net channel counts.
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default)]
    pub norm: NormChoice,
    /// Group-norm group count; `min(8, channels)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { arch: ArchKind::Mlp, hidden: default_hidden(), channels: default_channels(), norm: NormChoice::GroupNorm, groups: None }
    }
}

impl ModelConfig {
    pub fn spec(&self, input: InputShape, classes: usize) -> ModelSpec {
        let architecture = match self.arch {
            ArchKind::Mlp => Architecture::Mlp { hidden: self.hidden.clone() },
            ArchKind::TinyCnn => Architecture::TinyCnn { channels: self.channels.clone() },
        };
        let norm = match self.norm {
            NormChoice::None => NormKind::None,
            NormChoice::BatchNorm => NormKind::BatchNorm,
            NormChoice::GroupNorm => NormKind::GroupNorm(self.groups),
        };
        ModelSpec { architecture, norm, input, classes }
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// Total users `K`.
    pub users: usize,
    /// Users sampled per round `C`.
    pub participants: usize,
    /// Labeled samples at the server `N_s`.
    pub server_samples: usize,
    /// Target non-iid level `R` in `[0, 1]`.
    pub noniid: f64,
    /// Local steps per round `T`.
    pub period: usize,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Test accuracy is computed every this many rounds and after the last.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Fedavg,
    Grouping { groups: usize },
}

fn default_partition_seed() -> u64 {
    DEFAULT_PARTITION_SEED
}

fn default_weight_seed() -> u64 {
    DEFAULT_WEIGHT_SEED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default = "default_partition_seed")]
    pub partition: u64,
    #[serde(default = "default_weight_seed")]
    pub weights: u64,
    /// Drives participant sampling, grouping, batches and augmentation.
    #[serde(default)]
    pub schedule: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { partition: DEFAULT_PARTITION_SEED, weights: DEFAULT_WEIGHT_SEED, schedule: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    pub federation: FederationConfig,
    #[serde(default)]
    pub aggregation: Averaging,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub seeds: Seeds,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SsflError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SsflError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SsflError::Config(e.to_string()))
    }

    pub fn to_manifest_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SsflError::Config(e.to_string()))
    }

    pub fn from_manifest_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SsflError::Config(e.to_string()))
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let f = &self.federation;
        let fail = |msg: String| Err(SsflError::Config(msg));
        if f.users == 0 {
            return fail("federation.users must be positive".into());
        }
        if f.participants == 0 || f.participants > f.users {
            return fail(format!("federation.participants must lie in 1..={}", f.users));
        }
        if !(0.0..=1.0).contains(&f.noniid) {
            return fail(format!("federation.noniid {} outside [0, 1]", f.noniid));
        }
        if f.period == 0 {
            return fail("federation.period must be positive".into());
        }
        if f.server_samples == 0 {
            return fail("federation.server_samples must be positive".into());
        }
        if !(f.threshold > 0.0 && f.threshold < 1.0) {
            return fail(format!("federation.threshold {} outside (0, 1)", f.threshold));
        }
        if f.eval_every == 0 {
            return fail("federation.eval_every must be positive".into());
        }
        if let Averaging::Grouping { groups } = self.aggregation {
            if groups == 0 || groups > f.participants {
                return fail(format!("aggregation.groups must lie in 1..={}", f.participants));
            }
        }
        self.optimizer.validate().map_err(|e| SsflError::Config(e.to_string()))?;
        Ok(())
    }

    /// Applies `key=value` where key is one of `partition`, `weights`,
    /// `schedule` or `dataset`.
    pub fn apply_seed_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| SsflError::Config(format!("seed override {assignment:?} is not key=value")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| SsflError::Config(format!("seed override value {value:?} is not an unsigned integer")))?;
        match key.trim() {
            "partition" => self.seeds.partition = value,
            "weights" => self.seeds.weights = value,
            "schedule" => self.seeds.schedule = value,
            "dataset" => {
                *self
                    .dataset
                    .seed_mut()
                    .ok_or_else(|| SsflError::Config("this dataset source has no seed".into()))? = value
            }
            other => return Err(SsflError::Config(format!("unknown seed {other:?}"))),
        }
        Ok(())
    }

    /// Rounds needed to cover the learning-rate schedule.
    pub fn rounds(&self) -> usize {
        self.optimizer.schedule.total_steps().div_ceil(self.federation.period)
    }
}
