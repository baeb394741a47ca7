//! Scenario generation: receiver semantics and the gesture library.
//!
//! Each receiver sits at a latent site `(x, y)` in the unit square. Its static
//! paths (direct path and one or more reflections) are smooth functions of the
//! site plus a small idiosyncratic term, so nearby receivers see similar
//! environments. The dynamic paths start from one scenario-wide base set and
//! are perturbed as a function of the site, scaled by the heterogeneity knob:
//! at `heterogeneity = 0` every receiver shares the same dynamic paths.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{AmplitudeEnvelope, DfsTrajectory, GestureSpec, GridShape, RadioConfig};
use crate::error::{PsanError, Result};
use crate::rng::{self, tag};
use crate::semantics::{EmbeddingConfig, PathComponent, SemanticProfile};

/// Number of built-in gesture classes.
pub const LIBRARY_SIZE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Has labelled training data.
    Source,
    /// Has no labels; receives an aggregated model.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sources: usize,
    pub targets: usize,
    pub classes: usize,
    /// Labelled training samples per class at every source receiver.
    pub samples_per_class: usize,
    /// Fraction of all generated samples of a source receiver that go to the
    /// test split.
    pub test_fraction: f64,
    /// Scales the site-dependent perturbation of the dynamic paths.
    pub heterogeneity: f64,
    pub static_paths: usize,
    pub dynamic_paths: usize,
    pub noise_std: f64,
    /// Relative spread of per-performance gesture variations.
    pub gesture_jitter: f64,
    /// Give target `i` exactly the semantics of source `i mod sources`.
    pub duplicate_targets: bool,
    pub grid: GridShape,
    pub radio: RadioConfig,
    pub embedding: EmbeddingConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sources: 12,
            targets: 6,
            classes: 6,
            samples_per_class: 3,
            test_fraction: 0.8,
            heterogeneity: 1.0,
            static_paths: 2,
            dynamic_paths: 1,
            noise_std: 0.05,
            gesture_jitter: 0.15,
            duplicate_targets: false,
            grid: GridShape::default(),
            radio: RadioConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn receivers(&self) -> usize {
        self.sources + self.targets
    }

    /// Test samples per class; every receiver generates
    /// `samples_per_class + test_per_class` samples of each class.
    pub fn test_per_class(&self) -> usize {
        let tf = self.test_fraction;
        (self.samples_per_class as f64 * tf / (1.0 - tf)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources < 2 {
            return Err(PsanError::config(
                "scenario.sources",
                format!(
                    "got {}; semantic-to-model training pairs need at least 2 source receivers",
                    self.sources
                ),
            ));
        }
        if self.classes < 2 || self.classes > LIBRARY_SIZE {
            return Err(PsanError::config(
                "scenario.classes",
                format!("must be in 2..={LIBRARY_SIZE}"),
            ));
        }
        if self.samples_per_class == 0 {
            return Err(PsanError::config("scenario.samples_per_class", "must be >= 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PsanError::config("scenario.test_fraction", "must lie in (0, 1)"));
        }
        if self.test_per_class() == 0 {
            return Err(PsanError::config(
                "scenario.test_fraction",
                "yields an empty test split; raise it or samples_per_class",
            ));
        }
        if !(self.heterogeneity.is_finite() && self.heterogeneity >= 0.0) {
            return Err(PsanError::config("scenario.heterogeneity", "must be >= 0"));
        }
        if self.static_paths == 0 {
            return Err(PsanError::config("scenario.static_paths", "a direct path always exists"));
        }
        let max = self.embedding.max_paths;
        if self.static_paths > max || self.dynamic_paths > max {
            return Err(PsanError::config(
                "scenario.static_paths/dynamic_paths",
                format!("must not exceed embedding.max_paths = {max}"),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(PsanError::config("scenario.noise_std", "must be >= 0"));
        }
        if !(self.gesture_jitter.is_finite() && (0.0..0.5).contains(&self.gesture_jitter)) {
            return Err(PsanError::config("scenario.gesture_jitter", "must lie in [0, 0.5)"));
        }
        self.grid.validate()?;
        self.radio.validate()?;
        self.embedding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverPlan {
    pub profile: SemanticProfile,
    pub role: Role,
    /// For duplicated targets: the source whose semantics were copied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub master_seed: u64,
    pub config: ScenarioConfig,
    pub receivers: Vec<ReceiverPlan>,
}

impl Scenario {
    pub fn sources(&self) -> impl Iterator<Item = &ReceiverPlan> {
        self.receivers.iter().filter(|r| r.role == Role::Source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &ReceiverPlan> {
        self.receivers.iter().filter(|r| r.role == Role::Target)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.config.validate()?;
        for r in &s.receivers {
            r.profile.validate()?;
        }
        Ok(s)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Generate the receiver population.
pub fn make_scenario(config: &ScenarioConfig, master_seed: u64) -> Result<Scenario> {
    config.validate()?;
    let h = config.heterogeneity;

    let mut base_rng = rng::stream(master_seed, &[tag::SCENARIO]);
    let base_dynamic: Vec<PathComponent> = (0..config.dynamic_paths)
        .map(|_| {
            PathComponent::dynamic_path(
                base_rng.random_range(0.35..0.55),
                base_rng.random_range(20e-9..50e-9),
                base_rng.random_range(0.5 * PI..1.5 * PI),
                0.0,
            )
        })
        .collect();

    let profile_for = |id: usize| -> Result<SemanticProfile> {
        let mut r = rng::stream(master_seed, &[tag::SCENARIO, id as u64]);
        let (x, y): (f64, f64) = (r.random(), r.random());
        let mut statics = Vec::with_capacity(config.static_paths);
        statics.push(PathComponent::static_path(
            0.55 + 0.4 * y,
            (8.0 + 30.0 * x) * 1e-9,
            wrap_angle(0.3 + 2.4 * x + 0.8 * y),
        ));
        for j in 1..config.static_paths {
            let u: f64 = r.random();
            let jf = j as f64;
            statics.push(PathComponent::static_path(
                (0.15 + 0.2 * (1.0 - y) + 0.05 * u) / jf,
                (35.0 + 40.0 * y + 10.0 * u) * 1e-9 / (1.0 + 0.1 * (jf - 1.0)),
                wrap_angle(2.0 + 3.0 * y + 0.5 * u + 1.7 * (jf - 1.0)),
            ));
        }
        let dynamics = base_dynamic
            .iter()
            .map(|b| {
                PathComponent::dynamic_path(
                    b.attenuation * (1.0 + 0.3 * h * (y - 0.5)),
                    (b.delay_s + h * 15e-9 * (x - 0.5)).max(0.0),
                    wrap_angle(b.aoa_rad + h * (y - 0.5)),
                    b.dfs_hz + h * 30.0 * (2.0 * x - 1.0),
                )
            })
            .collect();
        SemanticProfile::new(id, statics, dynamics)?.with_embedding(&config.embedding)
    };

    let mut receivers = Vec::with_capacity(config.receivers());
    for id in 0..config.sources {
        receivers.push(ReceiverPlan {
            profile: profile_for(id)?,
            role: Role::Source,
            duplicate_of: None,
        });
    }
    for i in 0..config.targets {
        let id = config.sources + i;
        let (profile, duplicate_of) = if config.duplicate_targets {
            let src = i % config.sources;
            let mut p = receivers[src].profile.clone();
            p.receiver_id = id;
            (p, Some(src))
        } else {
            (profile_for(id)?, None)
        };
        receivers.push(ReceiverPlan {
            profile,
            role: Role::Target,
            duplicate_of,
        });
    }
    Ok(Scenario {
        master_seed,
        config: config.clone(),
        receivers,
    })
}

/// Built-in gesture class `class_id` in its nominal form.
pub fn library_gesture(class_id: usize) -> Result<GestureSpec> {
    let (dfs, amplitude) = match class_id {
        0 => (
            DfsTrajectory::Constant { hz: 20.0 },
            AmplitudeEnvelope::Constant { gain: 1.0 },
        ),
        1 => (
            DfsTrajectory::Chirp {
                start_hz: 0.0,
                end_hz: 45.0,
            },
            AmplitudeEnvelope::Ramp { start: 0.6, end: 1.0 },
        ),
        2 => (
            DfsTrajectory::Chirp {
                start_hz: 0.0,
                end_hz: -45.0,
            },
            AmplitudeEnvelope::Ramp { start: 1.0, end: 0.6 },
        ),
        3 => (
            DfsTrajectory::Sinusoid {
                amplitude_hz: 30.0,
                cycles: 1.0,
                phase_rad: 0.0,
            },
            AmplitudeEnvelope::Constant { gain: 1.0 },
        ),
        4 => (
            DfsTrajectory::Sinusoid {
                amplitude_hz: 30.0,
                cycles: 4.0,
                phase_rad: 0.0,
            },
            AmplitudeEnvelope::Oscillating {
                mean: 1.0,
                depth: 0.3,
                cycles: 4.0,
            },
        ),
        5 => (
            DfsTrajectory::Burst {
                peak_hz: 45.0,
                center: 0.5,
                width: 0.4,
            },
            AmplitudeEnvelope::Bump {
                base: 0.6,
                peak: 1.2,
                center: 0.5,
                width: 0.4,
            },
        ),
        other => {
            return Err(PsanError::config(
                "gesture.class_id",
                format!("{other} is not a built-in class (0..{LIBRARY_SIZE})"),
            ))
        }
    };
    Ok(GestureSpec {
        class_id,
        dfs,
        amplitude,
    })
}

/// One performance of a class: speed, extent and timing vary by up to
/// `jitter` (relative).
pub fn perform_gesture<R: Rng + ?Sized>(class_id: usize, jitter: f64, rng: &mut R) -> Result<GestureSpec> {
    let nominal = library_gesture(class_id)?;
    let mut draw = |spread: f64| {
        if spread == 0.0 {
            1.0
        } else {
            1.0 + rng.random_range(-spread..=spread)
        }
    };
    let scale = draw(jitter);
    let shift = draw(jitter) - 1.0;
    let gain = draw(jitter);
    let dfs = match nominal.dfs {
        DfsTrajectory::Constant { hz } => DfsTrajectory::Constant { hz: hz * scale },
        DfsTrajectory::Chirp { start_hz, end_hz } => DfsTrajectory::Chirp {
            start_hz: start_hz * scale,
            end_hz: end_hz * scale,
        },
        DfsTrajectory::Sinusoid {
            amplitude_hz,
            cycles,
            phase_rad,
        } => DfsTrajectory::Sinusoid {
            amplitude_hz: amplitude_hz * scale,
            cycles: cycles * (1.0 + 0.5 * shift),
            phase_rad: phase_rad + PI * shift,
        },
        DfsTrajectory::Burst {
            peak_hz,
            center,
            width,
        } => DfsTrajectory::Burst {
            peak_hz: peak_hz * scale,
            center: center + 0.5 * shift,
            width,
        },
    };
    let amplitude = match nominal.amplitude {
        AmplitudeEnvelope::Constant { gain: g } => AmplitudeEnvelope::Constant { gain: g * gain },
        AmplitudeEnvelope::Ramp { start, end } => AmplitudeEnvelope::Ramp {
            start: start * gain,
            end: end * gain,
        },
        AmplitudeEnvelope::Bump {
            base,
            peak,
            center,
            width,
        } => AmplitudeEnvelope::Bump {
            base: base * gain,
            peak: peak * gain,
            center: center + 0.5 * shift,
            width,
        },
        AmplitudeEnvelope::Oscillating {
            mean,
            depth,
            cycles,
        } => AmplitudeEnvelope::Oscillating {
            mean: mean * gain,
            depth,
            cycles: cycles * (1.0 + 0.5 * shift),
        },
    };
    Ok(GestureSpec {
        class_id,
        dfs,
        amplitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_mirrors_twelve_and_six() {
        let s = make_scenario(&ScenarioConfig::default(), 42).unwrap();
        assert_eq!(s.receivers.len(), 18);
        for (i, r) in s.receivers.iter().enumerate() {
            assert_eq!(r.profile.receiver_id, i);
            assert_eq!(r.role, if i < 12 { Role::Source } else { Role::Target });
            assert_eq!(r.profile.embedding.len(), 16);
        }
        assert_eq!(s.sources().count(), 12);
    }

    #[test]
    fn zero_heterogeneity_shares_gesture_semantics() {
        let cfg = ScenarioConfig {
            heterogeneity: 0.0,
            ..Default::default()
        };
        let s = make_scenario(&cfg, 3).unwrap();
        let first = &s.receivers[0].profile.dynamic_paths;
        assert!(s.receivers.iter().all(|r| &r.profile.dynamic_paths == first));
        // environment semantics still vary
        assert_ne!(s.receivers[0].profile.static_paths, s.receivers[1].profile.static_paths);
    }

    #[test]
    fn deterministic_serialization() {
        let cfg = ScenarioConfig::default();
        let a = make_scenario(&cfg, 11).unwrap().to_toml().unwrap();
        let b = make_scenario(&cfg, 11).unwrap().to_toml().unwrap();
        assert_eq!(a, b);
        let c = make_scenario(&cfg, 12).unwrap().to_toml().unwrap();
        assert_ne!(a, c);
        assert_eq!(Scenario::from_toml(&a).unwrap(), make_scenario(&cfg, 11).unwrap());
    }

    #[test]
    fn rejects_single_source() {
        let cfg = ScenarioConfig {
            sources: 1,
            ..Default::default()
        };
        let err = make_scenario(&cfg, 0).unwrap_err().to_string();
        assert!(err.contains("at least 2 source"), "{err}");
    }

    #[test]
    fn duplicated_targets_copy_semantics() {
        let cfg = ScenarioConfig {
            duplicate_targets: true,
            ..Default::default()
        };
        let s = make_scenario(&cfg, 5).unwrap();
        for t in s.targets() {
            let src = t.duplicate_of.unwrap();
            assert_eq!(t.profile.embedding, s.receivers[src].profile.embedding);
            assert_ne!(t.profile.receiver_id, src);
        }
    }

    #[test]
    fn profiles_respect_embedding_ranges() {
        for seed in 0..5 {
            let s = make_scenario(&ScenarioConfig::default(), seed).unwrap();
            for r in &s.receivers {
                assert!(r.profile.embedding.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn gestures_are_valid_for_all_classes() {
        let mut r = rng::stream(1, &[1]);
        for c in 0..LIBRARY_SIZE {
            let g = perform_gesture(c, 0.15, &mut r).unwrap();
            assert_eq!(g.class_id, c);
            for i in 0..100 {
                let u = i as f64 / 100.0;
                assert!(g.dfs.offset_hz(u).is_finite());
                assert!(g.amplitude.factor(u) >= 0.0);
            }
        }
        assert!(library_gesture(LIBRARY_SIZE).is_err());
        assert_eq!(perform_gesture(2, 0.0, &mut r).unwrap(), library_gesture(2).unwrap());
    }
}
