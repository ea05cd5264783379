//! The TOML run configuration.
//!
//! Every hyperparameter has a named key with its desk-scale default; the
//! full-scale reference values (epochs = 200, learning rate = 1e-6,
//! tau_zs = 2, tau_ct = 1, alpha = 0.1) are selectable by writing them into
//! the file. `seed` is the one required key when a config file is given;
//! everything else falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{TextArch, VisionArch};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::synth::{SyntheticConfig, TeacherConfig};
use crate::train::OptimizerConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Stop after this many steps; unset runs `optimizer.epochs` passes.
    pub steps: Option<u64>,
    pub eval_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: None, eval_every: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: u64,
    /// Softmax temperature over cosine similarities for predictions.
    pub tau: f64,
    /// Keep the pretraining objective active alongside the prediction loss.
    pub mix_pretrain: bool,
    pub eval_every: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { steps: 500, tau: 0.2, mix_pretrain: false, eval_every: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    /// Shots per class to evaluate, mirroring the few-shot table rows.
    pub n_per_class: Vec<usize>,
    pub steps: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { n_per_class: vec![0, 1, 2, 5], steps: 200 }
    }
}

/// Root configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; all component seeds derive from it.
    pub seed: Option<u64>,
    /// Worker threads for parallel sections; 0 uses the default pool and
    /// 1 guarantees bit-reproducibility.
    pub threads: usize,
    pub synth: SyntheticConfig,
    pub vision: VisionArch,
    pub text: TextArch,
    pub teacher: TeacherConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub fewshot: FewShotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 0,
            synth: SyntheticConfig::default(),
            vision: VisionArch::default(),
            text: TextArch::default(),
            teacher: TeacherConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            fewshot: FewShotConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML config file. `seed` must be present in the file (it can
    /// still be overridden on the command line).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.seed.is_none() {
            return Err(Error::Config(format!(
                "{}: missing required key 'seed'",
                path.display()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.vision.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.vision.z != self.text.z {
            return Err(Error::Config(format!(
                "vision z {} and text z {} must match",
                self.vision.z, self.text.z
            )));
        }
        if !(self.finetune.tau > 0.0) {
            return Err(Error::Config(format!(
                "finetune.tau must be positive, got {}",
                self.finetune.tau
            )));
        }
        Ok(())
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }

    /// Serializes the full configuration for run manifests.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_mirror_the_reference_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.loss.tau_ct, 1.0);
        assert_eq!(cfg.loss.tau_zs, 2.0);
        assert_eq!(cfg.loss.alpha, 0.1);
        assert_eq!(cfg.optimizer.epochs, 200);
        assert_eq!(cfg.optimizer.learning_rate, 1e-3);
        assert_eq!(crate::train::PAPER_LEARNING_RATE, 1e-6);
        assert_eq!(crate::train::PAPER_EPOCHS, 200);
        cfg.validate().unwrap();
    }

    #[test]
    fn load_requires_seed_and_names_missing_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[synth]\nnum_classes = 6\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn load_rejects_unknown_keys_by_name() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 1\n[optimizer]\nlerning_rate = 0.5\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn partial_file_round_trips_with_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 7\n[loss]\nalpha = 0.5\n[optimizer]\nlearning_rate = 1e-6\nepochs = 200\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.loss.alpha, 0.5);
        assert_eq!(cfg.loss.tau_ct, 1.0);
        assert_eq!(cfg.optimizer.learning_rate, 1e-6);
        assert_eq!(cfg.synth.num_classes, 10);
    }

    #[test]
    fn full_document_serializes_back_to_toml() {
        let cfg = RunConfig { seed: Some(3), ..RunConfig::default() };
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, Some(3));
        assert_eq!(back.optimizer.batch_size, cfg.optimizer.batch_size);
    }
}
