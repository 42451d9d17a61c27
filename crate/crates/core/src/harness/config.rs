//! Experiment configuration: TOML on disk, full-scale defaults and the
//! desk-scale preset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum and L2 weight decay.
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Single-image passes averaged into one update.
    pub accumulate: usize,
    /// Epoch at whose start the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 5e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            accumulate: 10,
            lr_drop_epoch: Some(15),
            lr_drop_factor: 0.1,
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerConfig {
    /// Learning rate used for updates taken during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop_epoch {
            Some(drop) if epoch >= drop => self.lr * self.lr_drop_factor,
            _ => self.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.accumulate == 0 {
            return Err(Error::Config("optimizer.accumulate must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("optimizer.lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("momentum and beta2 must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer.weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    /// Full-scale protocol: VGG-shaped backbone, SGD with momentum 0.9,
    /// weight decay 5e-4, lr 5e-5 divided by 10 after 15 of 24 epochs,
    /// 10-image accumulation. Data comes from image/mask directories.
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            seed: 0,
            epochs: 24,
            model: ModelConfig::full_scale(variant),
            optimizer: OptimizerConfig::default(),
            data: DataConfig {
                train: DatasetManifest::directory("train", "data/DUTS-TR", 10553, 320),
                test: DatasetManifest::directory("test", "data/DUTS-TE", 5019, 320),
            },
        }
    }

    /// Desk preset: toy backbone, 64x64 synthetic images (200 train, 50
    /// test), 30 epochs of single-image Adam updates, lr divided by 10
    /// after 22 epochs.
    pub fn desk(variant: Variant) -> Self {
        Self {
            seed: 0,
            epochs: 30,
            model: ModelConfig::toy(variant),
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 3e-4,
                momentum: 0.9,
                weight_decay: 5e-4,
                accumulate: 1,
                lr_drop_epoch: Some(22),
                lr_drop_factor: 0.1,
                beta2: default_beta2(),
                epsilon: default_epsilon(),
            },
            data: DataConfig {
                train: DatasetManifest::synthetic("train", 200, 64, 1),
                test: DatasetManifest::synthetic("test", 50, 64, 2),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_has_one_drop_at_the_boundary() {
        let opt = OptimizerConfig::default();
        let lrs: Vec<f64> = (0..24).map(|e| opt.lr_at(e)).collect();
        assert!(lrs[..15].iter().all(|&lr| lr == 5e-5));
        assert!(lrs[15..].iter().all(|&lr| (lr - 5e-6).abs() < 1e-18));
        assert_eq!(lrs.windows(2).filter(|w| w[0] != w[1]).count(), 1);
    }

    #[test]
    fn toml_round_trip() {
        for config in [ExperimentConfig::desk(Variant::Full), ExperimentConfig::full_scale(Variant::Baseline)] {
            let text = config.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config);
        }
    }

    #[test]
    fn zero_accumulation_is_rejected() {
        let mut config = ExperimentConfig::desk(Variant::Baseline);
        config.optimizer.accumulate = 0;
        assert!(config.validate().is_err());
    }
}
