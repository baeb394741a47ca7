//! Run configuration (TOML).
//!
//! Every section and field is optional; omitted values take the defaults
//! below. Unknown keys are rejected so typos surface as errors.
//!
//! ```toml
//! seed = 7
//!
//! [scenario]
//! sources = 12
//! targets = 6
//! heterogeneity = 1.0
//!
//! [schedule]
//! rounds = 250
//!
//! [regularizer]
//! gamma = 1.0
//! sigma = { mode = "median", scale = 1.0 }
//! alpha = { mode = "auto" }
//!
//! [transfer]
//! metric = "cosine"
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PsanError, Result};
use crate::features::FeatureSpec;
use crate::mapping::MappingConfig;
use crate::metric::Metric;
use crate::model::{Arch, LossSpec};
use crate::scenario::ScenarioConfig;
use crate::train::{RegularizerSpec, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub dfs_bins: usize,
    pub dfs_max_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dfs_bins: 16,
            dfs_max_hz: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width; 0 selects multinomial logistic regression.
    pub hidden: usize,
    pub l2: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 0, l2: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub metric: Metric,
    /// Multiplies the median implied squared model distance of the mapping's
    /// training pairs to give the transfer bandwidth.
    pub bandwidth_scale: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            metric: Metric::Cosine,
            bandwidth_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Round spacing of the accuracy curves in the metric comparison.
    pub eval_every: usize,
    /// Make `psan eval` exit with status 3 when pSAN does not beat both
    /// baselines on the target receivers.
    pub hard_ordering: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eval_every: 10,
            hard_ordering: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub regularizer: RegularizerSpec,
    pub mapping: MappingConfig,
    pub transfer: TransferConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Copy with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig { seed, ..self.clone() }
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            shape: self.scenario.grid,
            dfs_bins: self.features.dfs_bins,
            dfs_max_hz: self.features.dfs_max_hz,
        }
    }

    pub fn arch(&self) -> Arch {
        Arch::new(self.feature_spec().dim(), self.model.hidden, self.scenario.classes)
    }

    pub fn loss(&self) -> LossSpec {
        LossSpec { l2: self.model.l2 }
    }

    /// Schedule with the master seed filled in.
    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            seed: self.seed,
            ..self.schedule
        }
    }

    pub fn mapping_config(&self) -> MappingConfig {
        MappingConfig {
            seed: self.seed,
            ..self.mapping
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.feature_spec().validate()?;
        self.loss().validate()?;
        self.schedule.validate()?;
        self.regularizer.validate()?;
        self.mapping.validate()?;
        if !(self.transfer.bandwidth_scale.is_finite() && self.transfer.bandwidth_scale > 0.0) {
            return Err(PsanError::config("transfer.bandwidth_scale", "must be > 0"));
        }
        if self.eval.eval_every == 0 {
            return Err(PsanError::config("eval.eval_every", "must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{AlphaMode, SigmaMode};

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.arch().param_count(), 82 * 6 + 6);
    }

    #[test]
    fn module_doc_example_parses() {
        let text = "seed = 7\n[scenario]\nsources = 12\ntargets = 6\nheterogeneity = 1.0\n[schedule]\nrounds = 250\n\
                    [regularizer]\ngamma = 1.0\nsigma = { mode = \"median\", scale = 1.0 }\nalpha = { mode = \"auto\" }\n\
                    [transfer]\nmetric = \"cosine\"\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.regularizer.sigma, SigmaMode::Median { scale: 1.0 });
        assert_eq!(cfg.regularizer.alpha, AlphaMode::Auto);
        assert_eq!(cfg.train_schedule().seed, 7);
    }

    #[test]
    fn roundtrip_and_hash_are_stable() {
        let cfg = RunConfig::default().with_seed(3);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_ne!(cfg.hash().unwrap(), RunConfig::default().hash().unwrap());
    }

    #[test]
    fn field_level_errors() {
        let err = RunConfig::from_toml("[scenario]\nsources = 1\n").unwrap_err().to_string();
        assert!(err.contains("scenario.sources"), "{err}");
        let err = RunConfig::from_toml("[schedule]\nbatch_size = 0\n").unwrap_err().to_string();
        assert!(err.contains("schedule.batch_size"), "{err}");
        assert!(RunConfig::from_toml("[scenario]\nsourcez = 3\n").is_err());
    }
}
