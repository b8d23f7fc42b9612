//! TOML run configuration with one section per module.
//!
//! Every section and key is optional; missing values take their defaults.
//! Unknown top-level sections are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use utgpose_neural::TrainConfig;

use super::dataset::DatasetCounts;
use super::eval::EvalParams;
use super::import::SchemaConfig;
use super::walk::{ExperimentParams, WalkEnv};
use super::{HarnessError, Result};
use crate::channel::ChannelParams;
use crate::imusim::GaitParams;
use crate::models::{los_train_config, pose_train_config};
use crate::ranging::RangingParams;

/// Changes to a network's default training settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_loss: Option<f64>,
    /// Use at most this many training examples per pose or label group.
    pub limit_per_group: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(lr) = self.lr {
            cfg.adam.lr = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(e) = self.max_epochs {
            cfg.max_epochs = e;
        }
        if self.early_stop_loss.is_some() {
            cfg.early_stop_loss = self.early_stop_loss;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetCounts,
    pub channel: ChannelParams,
    pub gait: GaitParams,
    pub ranging: RangingParams,
    pub train_los: TrainOverrides,
    pub train_pose: TrainOverrides,
    pub experiment: ExperimentParams,
    pub eval: EvalParams,
    pub import: SchemaConfig,
}

/// Parses any TOML document, e.g. a walk scenario.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.gait.validate()?;
        self.ranging.validate()?;
        for (name, t) in [("train_los", &self.train_los), ("train_pose", &self.train_pose)] {
            if t.batch_size == Some(0) || t.max_epochs == Some(0) || t.limit_per_group == Some(0) {
                return Err(HarnessError::Invalid(format!("{name}: sizes must be positive")));
            }
            if t.lr.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
                return Err(HarnessError::Invalid(format!("{name}: learning rate must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.outlier_rate) {
            return Err(HarnessError::Invalid(format!("eval.outlier_rate {}", self.eval.outlier_rate)));
        }
        if self.experiment.trials_per_pose == 0 {
            return Err(HarnessError::Invalid("experiment.trials_per_pose must be positive".into()));
        }
        Ok(())
    }

    pub fn los_train(&self) -> TrainConfig {
        self.train_los.apply(los_train_config(self.seed))
    }

    pub fn pose_train(&self) -> TrainConfig {
        self.train_pose.apply(pose_train_config(self.seed))
    }

    pub fn walk_env(&self) -> WalkEnv {
        WalkEnv {
            channel: self.channel.clone(),
            gait: self.gait.clone(),
            ranging: self.ranging,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn partial_sections() {
        let cfg = Config::from_toml("seed = 5\n[channel]\nnoise_scale = 100.0\n[train_los]\nmax_epochs = 2\n").unwrap();
        assert_eq!(cfg.channel.noise_scale, 100.0);
        assert_eq!(cfg.channel.los_decay_ns, ChannelParams::default().los_decay_ns);
        let t = cfg.los_train();
        assert_eq!((t.max_epochs, t.batch_size, t.seed), (2, 50, 5));
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(Config::from_toml("[chanel]\nnoise_scale = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[channel]\nnoise_scale = -1.0\n").is_err());
        assert!(Config::from_toml("[train_pose]\nbatch_size = 0\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = Config {
            seed: 9,
            ..Config::default()
        };
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
