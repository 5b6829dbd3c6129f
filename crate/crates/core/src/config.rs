//! Training configuration, read from a single JSON document.
//!
//! Every field has a default, so `{}` with a `dataset_spec` is a complete
//! config. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{digest_bytes, ConfigDigest};
use crate::data::{DatasetSpec, Pairing, SamplerMode, SPLIT_NAMES};
use crate::ensemble::DEFAULT_SIGMA2;
use crate::error::{Error, Result};
use crate::model::DEFAULT_LOGIT_SCALE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-batch first-order meta steps after warm-up.
    #[default]
    Meta,
    /// Ordinary per-batch descent for every epoch.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSet {
    Base,
    Novel,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSettings {
    pub delta: f64,
    pub tasks_per_step: usize,
    pub batch_size: usize,
    pub pairing: Pairing,
    pub optimizer: OptimizerKind,
}

impl Default for MetaSettings {
    fn default() -> Self {
        MetaSettings {
            delta: 0.5,
            tasks_per_step: 4,
            batch_size: 8,
            pairing: Pairing::Disjoint,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

/// Cosine decay endpoints. `total_steps: null` means the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSettings {
    pub alpha_init: f64,
    pub alpha_final: f64,
    pub beta_init: f64,
    pub beta_final: f64,
    pub total_steps: Option<usize>,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        ScheduleSettings {
            alpha_init: 1e-2,
            alpha_final: 1e-4,
            beta_init: 1e-2,
            beta_final: 1e-4,
            total_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GwaSettings {
    pub enabled: bool,
    /// `null` picks `ceil(0.6 * epochs)`.
    pub mu: Option<f64>,
    pub sigma2: f64,
    /// Leave warm-up epochs out of the average.
    pub skip_warmup: bool,
}

impl Default for GwaSettings {
    fn default() -> Self {
        GwaSettings {
            enabled: true,
            mu: None,
            sigma2: DEFAULT_SIGMA2,
            skip_warmup: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub model: u64,
    pub sampler: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTarget {
    pub split: String,
    pub classes: ClassSet,
}

impl EvalTarget {
    pub fn new(split: &str, classes: ClassSet) -> Self {
        EvalTarget {
            split: split.to_string(),
            classes,
        }
    }
}

pub fn default_eval_targets() -> Vec<EvalTarget> {
    use crate::data::*;
    vec![
        EvalTarget::new(TEST_BASE_IC, ClassSet::Base),
        EvalTarget::new(TEST_NOVEL_IC, ClassSet::Novel),
        EvalTarget::new(TEST_BASE_OOC, ClassSet::Base),
        EvalTarget::new(TEST_NOVEL_OOC, ClassSet::Novel),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset_spec: Option<DatasetSpec>,
    pub dataset_path: Option<PathBuf>,
    pub extractor_dims: Vec<usize>,
    pub logit_scale: f64,
    pub method: Method,
    pub meta: MetaSettings,
    pub schedule: ScheduleSettings,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub gwa: GwaSettings,
    pub sampler: SamplerMode,
    pub seeds: Seeds,
    pub eval: Vec<EvalTarget>,
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_spec: None,
            dataset_path: None,
            extractor_dims: vec![16, 32, 8],
            logit_scale: DEFAULT_LOGIT_SCALE,
            method: Method::Meta,
            meta: MetaSettings::default(),
            schedule: ScheduleSettings::default(),
            epochs: 20,
            warmup_epochs: 0,
            gwa: GwaSettings::default(),
            sampler: SamplerMode::Shuffle,
            seeds: Seeds::default(),
            eval: default_eval_targets(),
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        TrainConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> ConfigDigest {
        digest_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset_spec, &self.dataset_path) {
            (Some(_), Some(_)) => return Err(Error::config("give either dataset_spec or dataset_path, not both")),
            (None, None) => return Err(Error::config("dataset_spec or dataset_path is required")),
            (Some(spec), None) => spec.validate()?,
            _ => {}
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::config("logit_scale must be positive"));
        }
        let s = &self.schedule;
        for (name, v) in [
            ("alpha_init", s.alpha_init),
            ("alpha_final", s.alpha_final),
            ("beta_init", s.beta_init),
            ("beta_final", s.beta_final),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if s.total_steps == Some(0) {
            return Err(Error::config("schedule.total_steps must be positive"));
        }
        let m = &self.meta;
        if !(m.delta >= 0.0 && m.delta.is_finite()) {
            return Err(Error::config("meta.delta must be >= 0"));
        }
        if m.tasks_per_step == 0 || m.batch_size == 0 {
            return Err(Error::config(
                "meta.tasks_per_step and meta.batch_size must be positive",
            ));
        }
        if !(self.gwa.sigma2 > 0.0) {
            return Err(Error::config("gwa.sigma2 must be positive"));
        }
        if let Some(t) = self.eval.iter().find(|t| !SPLIT_NAMES.contains(&t.split.as_str())) {
            return Err(Error::config(format!("unknown eval split {}", t.split)));
        }
        Ok(())
    }
}
