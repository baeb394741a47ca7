//! Run manifests.
//!
//! Every output directory holds one `manifest.json` naming the stage that
//! produced it, the full configuration, and the digests of the manifests of
//! its input directories. Stages that combine directories check those digests
//! so artifacts from different runs are never mixed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{PsanError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Train,
    Transfer,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Transfer => "transfer",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub stage: Stage,
    pub config_hash: String,
    pub config: RunConfig,
    /// Stage-specific settings such as the training mode.
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
    /// Input role (for example `data`) to the digest of that directory's
    /// manifest.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Files written next to the manifest, relative to its directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(stage: Stage, config: &RunConfig) -> Result<Self> {
        Ok(RunManifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage,
            config_hash: config.hash()?,
            config: config.clone(),
            settings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MANIFEST_VERSION {
            return Err(PsanError::UnsupportedVersion {
                kind: "manifest",
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let m: RunManifest = serde_json::from_value(value)?;
        if m.config.hash()? != m.config_hash {
            return Err(PsanError::ManifestMismatch("config hash does not match the embedded config".into()));
        }
        Ok(m)
    }

    /// Digest identifying this manifest, used to link stages.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_json()?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// Check that this manifest was produced by `stage`.
    pub fn expect_stage(&self, stage: Stage) -> Result<&Self> {
        if self.stage != stage {
            return Err(PsanError::ManifestMismatch(format!(
                "expected a {} directory, found {}",
                stage.name(),
                self.stage.name()
            )));
        }
        Ok(self)
    }

    /// Check that this manifest lists `input` under `role`.
    pub fn expect_input(&self, role: &str, input: &RunManifest) -> Result<()> {
        let digest = input.digest()?;
        match self.inputs.get(role) {
            Some(d) if *d == digest => Ok(()),
            Some(_) => Err(PsanError::ManifestMismatch(format!(
                "{} output was built from a different {role} directory",
                self.stage.name()
            ))),
            None => Err(PsanError::ManifestMismatch(format!(
                "{} output records no {role} input",
                self.stage.name()
            ))),
        }
    }

    /// Check that two manifests agree on everything that shapes the data.
    pub fn expect_same_data(&self, other: &RunManifest) -> Result<()> {
        let a = &self.config;
        let b = &other.config;
        if a.seed != b.seed || a.scenario != b.scenario || a.features != b.features {
            return Err(PsanError::ManifestMismatch(format!(
                "{} and {} directories describe different scenarios",
                self.stage.name(),
                other.stage.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_digest() {
        let mut m = RunManifest::new(Stage::Train, &RunConfig::default().with_seed(2)).unwrap();
        m.settings.insert("mode".into(), "psan".into());
        m.artifacts.push("rounds.jsonl".into());
        let back = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest().unwrap(), m.digest().unwrap());
    }

    #[test]
    fn rejects_unknown_versions_and_tampered_configs() {
        let m = RunManifest::new(Stage::GenData, &RunConfig::default()).unwrap();
        let text = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(RunManifest::from_json(&text), Err(PsanError::UnsupportedVersion { found: 9, .. })));
        let mut tampered = m.clone();
        tampered.config.seed = 5;
        assert!(matches!(
            RunManifest::from_json(&tampered.to_json().unwrap()),
            Err(PsanError::ManifestMismatch(_))
        ));
    }

    #[test]
    fn linked_inputs_are_checked() {
        let data = RunManifest::new(Stage::GenData, &RunConfig::default()).unwrap();
        let other = RunManifest::new(Stage::GenData, &RunConfig::default().with_seed(1)).unwrap();
        let mut train = RunManifest::new(Stage::Train, &RunConfig::default()).unwrap();
        train.inputs.insert("data".into(), data.digest().unwrap());
        train.expect_input("data", &data).unwrap();
        assert!(train.expect_input("data", &other).is_err());
        assert!(train.expect_input("models", &data).is_err());
        assert!(train.expect_stage(Stage::Transfer).is_err());
        assert!(train.expect_same_data(&other).is_err());
        train.expect_same_data(&data).unwrap();
    }
}
