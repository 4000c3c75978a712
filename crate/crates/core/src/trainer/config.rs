use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grouping::{BoundsMode, MetricKind};
use crate::models::{MemConfig, StudentConfig};
use crate::{Error, Result};

/// Group count and spacing; the metric bounds are fitted on the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingSettings {
    pub n: usize,
    pub k: usize,
    pub bounds: BoundsMode,
}

impl Default for GroupingSettings {
    fn default() -> Self {
        Self {
            n: 3,
            k: 250,
            bounds: BoundsMode::default(),
        }
    }
}

/// Settings shared by teacher, student and metric-estimator training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub mem_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mem_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_eps: f64,
    pub lambda_pix: f64,
    pub lambda_das: f64,
    pub grouping: GroupingSettings,
    pub metric: MetricKind,
    /// Feed `forward_diffuse(z_L, t)` to the student instead of `z_L`.
    pub noise_injection: bool,
    pub seed: u64,
    pub train_manifest: Option<PathBuf>,
    /// Trailing fraction of the corpus (by index) kept out of training.
    pub holdout_fraction: f64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Steps between validation passes; 0 validates only at the end.
    pub val_every: usize,
    /// Held-out samples used by periodic validation.
    pub val_samples: usize,
    pub student: StudentConfig,
    pub mem: MemConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            teacher_steps: 2000,
            student_steps: 4000,
            mem_steps: 3000,
            batch_size: 4,
            learning_rate: 2e-4,
            mem_learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_eps: 1.0,
            lambda_pix: 1.0,
            lambda_das: 0.25,
            grouping: GroupingSettings::default(),
            metric: MetricKind::Cosine,
            noise_injection: false,
            seed: 0,
            train_manifest: None,
            holdout_fraction: 0.1,
            checkpoint_every: 0,
            val_every: 0,
            val_samples: 64,
            student: StudentConfig::default(),
            mem: MemConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.teacher_steps == 0 || self.student_steps == 0 || self.mem_steps == 0 {
            return bad("step counts must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("mem_learning_rate", self.mem_learning_rate)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("optimizer betas must lie in [0, 1) and eps must be positive".into());
        }
        for (name, v) in [
            ("lambda_eps", self.lambda_eps),
            ("lambda_pix", self.lambda_pix),
            ("lambda_das", self.lambda_das),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative weight, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction));
        }
        self.student.validate()?;
        Ok(())
    }

    /// Parses a JSON config. Unknown keys are rejected by name; a relative
    /// `train_manifest` is resolved against the config file's directory and
    /// must exist.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(m) = &cfg.train_manifest {
            if m.is_relative() {
                cfg.train_manifest = Some(path.parent().unwrap_or(Path::new(".")).join(m));
            }
        }
        if let Some(m) = &cfg.train_manifest {
            if !m.exists() {
                return Err(Error::Config(format!("train_manifest {} does not exist", m.display())));
            }
        }
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
