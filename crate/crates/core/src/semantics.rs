//! Physical-layer semantic profiles and their fixed-length embeddings.
//!
//! A profile lists the static propagation paths seen by a receiver (direct
//! path and reflections off walls and furniture) and the dynamic paths
//! reflected off the gesturing user. The embedding turns both lists into a
//! vector of `8 * max_paths` coordinates:
//!
//! ```text
//! [ static slot 0 | ... | static slot max_paths-1 | dynamic slot 0 | ... ]
//! slot = (attenuation, delay, angle of arrival, doppler shift), min-max normalised
//! ```
//!
//! Paths in each list are sorted by descending attenuation (ties broken by
//! ascending delay, then ascending angle) so the embedding does not depend on
//! the order the paths were listed in. Unused slots are zero.
//!
//! The construction is one admissible choice: what matters downstream is that
//! every receiver's embedding shares the same coordinate meaning so that
//! similarities between receivers are comparable.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{PsanError, Result};
use crate::metric::{self, Metric};

/// One propagation path of the multipath channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Amplitude attenuation factor, dimensionless and >= 0.
    pub attenuation: f64,
    /// Reference propagation delay in seconds.
    pub delay_s: f64,
    /// Angle of arrival in radians, in [0, 2pi).
    pub aoa_rad: f64,
    /// Doppler frequency shift in Hz. Exactly zero for static paths.
    #[serde(default)]
    pub dfs_hz: f64,
}

impl PathComponent {
    pub fn static_path(attenuation: f64, delay_s: f64, aoa_rad: f64) -> Self {
        PathComponent {
            attenuation,
            delay_s,
            aoa_rad,
            dfs_hz: 0.0,
        }
    }

    pub fn dynamic_path(attenuation: f64, delay_s: f64, aoa_rad: f64, dfs_hz: f64) -> Self {
        PathComponent {
            attenuation,
            delay_s,
            aoa_rad,
            dfs_hz,
        }
    }

    fn validate(&self, is_static: bool) -> Result<()> {
        let fields = [self.attenuation, self.delay_s, self.aoa_rad, self.dfs_hz];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(PsanError::NonFinite("path component"));
        }
        if self.attenuation < 0.0 {
            return Err(PsanError::InvalidPath(format!(
                "attenuation {} is negative",
                self.attenuation
            )));
        }
        if self.delay_s < 0.0 {
            return Err(PsanError::InvalidPath(format!(
                "delay {} is negative",
                self.delay_s
            )));
        }
        if !(0.0..TAU).contains(&self.aoa_rad) {
            return Err(PsanError::InvalidPath(format!(
                "angle of arrival {} outside [0, 2pi)",
                self.aoa_rad
            )));
        }
        if is_static && self.dfs_hz != 0.0 {
            return Err(PsanError::InvalidPath(format!(
                "static path carries a doppler shift of {} Hz",
                self.dfs_hz
            )));
        }
        Ok(())
    }

    /// Canonical order: descending attenuation, then ascending delay, then
    /// ascending angle.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .attenuation
            .total_cmp(&self.attenuation)
            .then(self.delay_s.total_cmp(&other.delay_s))
            .then(self.aoa_rad.total_cmp(&other.aoa_rad))
            .then(self.dfs_hz.total_cmp(&other.dfs_hz))
    }
}

/// Semantic description of one receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticProfile {
    pub receiver_id: usize,
    /// Static path set (environment semantics). Never empty.
    pub static_paths: Vec<PathComponent>,
    /// Dynamic path set (gesture semantics).
    #[serde(default)]
    pub dynamic_paths: Vec<PathComponent>,
    /// Cached embedding; filled by [`SemanticProfile::with_embedding`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f64>,
}

impl SemanticProfile {
    pub fn new(
        receiver_id: usize,
        static_paths: Vec<PathComponent>,
        dynamic_paths: Vec<PathComponent>,
    ) -> Result<Self> {
        let profile = SemanticProfile {
            receiver_id,
            static_paths,
            dynamic_paths,
            embedding: Vec::new(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.static_paths.is_empty() {
            return Err(PsanError::EmptyStaticPaths);
        }
        for p in &self.static_paths {
            p.validate(true)?;
        }
        for p in &self.dynamic_paths {
            p.validate(false)?;
        }
        Ok(())
    }

    /// Compute and cache the embedding.
    pub fn with_embedding(mut self, config: &EmbeddingConfig) -> Result<Self> {
        self.embedding = embed(&self, config)?;
        Ok(self)
    }
}

/// Closed physical interval used for min-max normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Slots per path list.
    pub max_paths: usize,
    /// Declared embedding dimension; must equal `8 * max_paths`.
    pub dim: usize,
    pub attenuation: Range,
    pub delay_s: Range,
    pub dfs_hz: Range,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            max_paths: 2,
            dim: 16,
            attenuation: Range::new(0.0, 1.0),
            delay_s: Range::new(0.0, 100e-9),
            dfs_hz: Range::new(-60.0, 60.0),
        }
    }
}

impl EmbeddingConfig {
    pub fn with_max_paths(max_paths: usize) -> Self {
        EmbeddingConfig {
            max_paths,
            dim: 8 * max_paths,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_paths == 0 {
            return Err(PsanError::config("embedding.max_paths", "must be positive"));
        }
        if self.dim != 8 * self.max_paths {
            return Err(PsanError::EmbeddingDimension {
                configured: self.dim,
                derived: 8 * self.max_paths,
            });
        }
        for (name, r) in [
            ("embedding.attenuation", self.attenuation),
            ("embedding.delay_s", self.delay_s),
            ("embedding.dfs_hz", self.dfs_hz),
        ] {
            if !(r.min.is_finite() && r.max.is_finite() && r.max > r.min) {
                return Err(PsanError::config(name, "range must be finite with max > min"));
            }
        }
        Ok(())
    }
}

/// Embed a profile into `config.dim` coordinates.
pub fn embed(profile: &SemanticProfile, config: &EmbeddingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let lists = [
        ("static", &profile.static_paths),
        ("dynamic", &profile.dynamic_paths),
    ];
    let mut out = Vec::with_capacity(config.dim);
    for (name, paths) in lists {
        if paths.len() > config.max_paths {
            return Err(PsanError::PathOverflow {
                list: name,
                count: paths.len(),
                max: config.max_paths,
            });
        }
        if paths
            .iter()
            .flat_map(|p| [p.attenuation, p.delay_s, p.aoa_rad, p.dfs_hz])
            .any(|v| !v.is_finite())
        {
            return Err(PsanError::NonFinite("semantic profile"));
        }
        let mut sorted: Vec<PathComponent> = paths.to_vec();
        sorted.sort_by(PathComponent::canonical_cmp);
        for p in &sorted {
            out.push(config.attenuation.normalize(p.attenuation));
            out.push(config.delay_s.normalize(p.delay_s));
            out.push(p.aoa_rad / TAU);
            out.push(config.dfs_hz.normalize(p.dfs_hz));
        }
        out.extend(std::iter::repeat_n(0.0, 4 * (config.max_paths - sorted.len())));
    }
    debug_assert_eq!(out.len(), config.dim);
    Ok(out)
}

/// Semantic similarity (cosine) or distance (euclidean) between embeddings.
pub fn semantic_distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    metric::compare(a, b, metric, "semantic embedding")
}
