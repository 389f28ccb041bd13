//! The single run configuration shared by every CLI subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{GmmConfig, TargetProxySpec};
use crate::error::{Error, Result};
use crate::imitator::ImitatorConfig;
use crate::losses::{LossOptions, LossWeights};
use crate::raster::{GridSpec, PosEncSpec};
use crate::scene::GeneratorConfig;
use crate::seed;
use crate::simloop::SimConfig;
use crate::trainer::{SplitFractions, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub loss_options: LossOptions,
    pub split: SplitFractions,
    pub imitator: ImitatorConfig,
    pub checkpoint_every: usize,
    pub validate_every: usize,
    pub max_steps: Option<usize>,
    pub calibrate_threshold: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weights: t.weights,
            loss_options: t.loss_options,
            split: t.split,
            imitator: ImitatorConfig {
                widths: vec![16, 32, 64],
                cls_prior: 0.01,
                ..t.imitator
            },
            checkpoint_every: t.checkpoint_every,
            validate_every: t.validate_every,
            max_steps: t.max_steps,
            calibrate_threshold: t.calibrate_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub gaussian_sigma: f64,
    /// FN ratio for both baselines; measured from proxy output when absent.
    pub fn_ratio: Option<f64>,
    pub gmm: GmmConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            gaussian_sigma: 0.1,
            fn_ratio: None,
            gmm: GmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub fixed_threshold: f64,
    /// Imitator detections are decoded down to this score for evaluation.
    pub score_floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            fixed_threshold: 0.5,
            score_floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness; module seeds are derived from it.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub grid: GridSpec,
    pub pos_enc: PosEncSpec,
    pub proxy: TargetProxySpec,
    pub baselines: BaselineSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            grid: GridSpec::desk(),
            pos_enc: PosEncSpec { d_model: 8 },
            proxy: TargetProxySpec::default(),
            baselines: BaselineSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills derived fields: module seeds from `seed`, imitator input
    /// channels from the positional encoding.
    pub fn resolve(mut self) -> Result<RunConfig> {
        self.proxy.seed = seed::derive_seed(self.seed, "target_proxy");
        self.train.imitator.in_channels = 4 + self.pos_enc.d_model;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.grid.validate()?;
        self.pos_enc.validate()?;
        self.proxy.validate()?;
        if !(self.baselines.gaussian_sigma >= 0.0) {
            return Err(Error::validation("baselines.gaussian_sigma", "must be non-negative"));
        }
        if let Some(r) = self.baselines.fn_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::validation("baselines.fn_ratio", "must lie in [0, 1]"));
            }
        }
        self.train_config().validate()?;
        self.sim.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: seed::derive_seed(self.seed, "train"),
            weights: t.weights,
            loss_options: t.loss_options,
            split: t.split,
            grid: self.grid,
            pos_enc: self.pos_enc,
            imitator: t.imitator.clone(),
            checkpoint_every: t.checkpoint_every,
            validate_every: t.validate_every,
            max_steps: t.max_steps,
            eval_score_floor: self.eval.score_floor,
            fixed_threshold: self.eval.fixed_threshold,
            calibrate_threshold: t.calibrate_threshold,
        }
    }

    pub fn module_seed(&self, module: &str) -> u64 {
        seed::derive_seed(self.seed, module)
    }

    /// Hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_hash_is_stable() {
        let a = RunConfig::default().resolve().unwrap();
        let b = RunConfig::default().resolve().unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = RunConfig { seed: 1, ..RunConfig::default() }.resolve().unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.train.imitator.in_channels, 12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sedd": 2}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 2}}"#);
        assert!(err.is_err());
        let ok: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 2}}"#).unwrap();
        assert_eq!(ok.train.epochs, 2);
    }

    #[test]
    fn roundtrip_through_json() {
        let a = RunConfig::default().resolve().unwrap();
        let s = serde_json::to_string_pretty(&a).unwrap();
        let b: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
