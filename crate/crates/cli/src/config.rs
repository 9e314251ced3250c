//! JSON run configuration. Every field has a default, so a config file only
//! needs the fields it changes.

use std::path::{Path, PathBuf};

use mcseg_core::data::SuiteSpec;
use mcseg_core::model::NetConfig;
use mcseg_core::motion::HornSchunckParams;
use mcseg_core::tensor::AdamState;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn state(&self) -> AdamState {
        AdamState::with_betas(self.lr, self.beta1, self.beta2, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Directory of numbered frames; a synthetic clip is used when unset.
    pub frames: Option<PathBuf>,
    pub resolutions: Vec<Resolution>,
    pub repetitions: usize,
    /// Worker threads inside the timed region.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            frames: None,
            resolutions: vec![Resolution {
                height: 480,
                width: 854,
            }],
            repetitions: 3,
            threads: 1,
        }
    }
}

/// Which predictions `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// The checkpoint's argmax masks.
    Model,
    /// The ground truth itself.
    Oracle,
    /// All-background masks.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Training dataset root (DAVIS layout).
    pub dataset: PathBuf,
    /// Evaluation dataset root; falls back to `dataset`.
    pub test_dataset: Option<PathBuf>,
    pub resolution: Resolution,
    pub flow: HornSchunckParams,
    pub folds: usize,
    pub fold_seed: u64,
    /// Sequences used by train / eval / xval; empty means all.
    pub stationary: Vec<String>,
    /// Label written to the `condition` column of reports.
    pub condition: String,
    pub predictor: Predictor,
    pub output: PathBuf,
    pub synth: SuiteSpec,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 16,
            epochs: 100,
            seeds: vec![0, 1, 2, 3, 4],
            dataset: PathBuf::from("data"),
            test_dataset: None,
            resolution: Resolution {
                height: 384,
                width: 384,
            },
            flow: HornSchunckParams::default(),
            folds: 4,
            fold_seed: 0,
            stationary: Vec::new(),
            condition: "stationary".into(),
            predictor: Predictor::Model,
            output: PathBuf::from("runs"),
            synth: SuiteSpec::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn test_dataset(&self) -> &Path {
        self.test_dataset.as_deref().unwrap_or(&self.dataset)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.net.validate()?;
        self.flow.validate()?;
        self.optimizer.state().validate()?;
        let bad = |field: &str, reason: &str| {
            Err(CliError::Core(mcseg_core::Error::InvalidConfig {
                field: field.into(),
                reason: reason.into(),
            }))
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed");
        }
        let Resolution { height, width } = self.resolution;
        if height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0 {
            return bad("resolution", "height and width must be positive multiples of 32");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.optimizer.lr, 0.005);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.folds, 4);
        assert_eq!(c.net.bottleneck_channels, 1024);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"epochs": 2, "net": {"width_mult": 0.25}}"#).unwrap();
        assert_eq!(c.epochs, 2);
        assert_eq!(c.net.width_mult, 0.25);
        assert_eq!(c.net.blocks_per_stage, [3, 4, 6, 3]);
        assert_eq!(c.batch_size, 16);
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::default();
        c.stationary = vec!["a".into(), "b".into()];
        c.bench.frames = Some("frames".into());
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_variant_rejected() {
        assert!(RunConfig::from_json(r#"{"net": {"variant": "triple"}}"#).is_err());
    }
}
