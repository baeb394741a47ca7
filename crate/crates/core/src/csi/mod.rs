//! Multipath CSI synthesis.
//!
//! A CSI sample at packet `t`, subcarrier frequency `f` and antenna `a` is the
//! superposition of every path's complex gain:
//!
//! ```text
//! H(t, f, a) = sum_static  A_n      exp(-j 2 pi f tau_n(f, a))
//!            + sum_dynamic A_m(t)   exp(-j 2 pi f tau_m(t, f, a))
//!
//! tau_n(f, a)    = tau0 + a * d * psi0 / (2 pi f_c)
//! tau_m(t, f, a) = tau0 - Phi_m(t) / f + a * d * psi0 / (2 pi f_c)
//! Phi_m(t)       = integral_0^t (rho0_m + doppler offset of the gesture) dt'
//! ```
//!
//! `d` is the antenna spacing in base wavelengths, so the inter-antenna phase
//! step at the base carrier `f_c` is `d * psi0` radians. `Phi_m` is the
//! accumulated Doppler phase in cycles, integrated with the trapezoidal rule
//! over packet times; with a constant shift it reduces to `rho0 * t`.

pub mod io;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PsanError, Result};
use crate::semantics::SemanticProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    /// Seconds between packets (1 / sampling rate).
    pub packet_interval_s: f64,
    pub subcarrier_spacing_hz: f64,
    /// Antenna spacing as a fraction of the base wavelength.
    pub antenna_spacing: f64,
    /// Frequency of subcarrier 0.
    pub base_frequency_hz: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            packet_interval_s: 1e-3,
            subcarrier_spacing_hz: 312.5e3 * 2.0,
            antenna_spacing: 0.5,
            base_frequency_hz: 5.825e9,
        }
    }
}

impl RadioConfig {
    pub fn sampling_rate_hz(&self) -> f64 {
        1.0 / self.packet_interval_s
    }

    pub fn subcarrier_frequency(&self, index: usize) -> f64 {
        self.base_frequency_hz + index as f64 * self.subcarrier_spacing_hz
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.packet_interval_s) {
            return Err(PsanError::config("radio.packet_interval_s", "must be positive"));
        }
        if !ok(self.base_frequency_hz) {
            return Err(PsanError::config("radio.base_frequency_hz", "must be positive"));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz >= 0.0) {
            return Err(PsanError::config("radio.subcarrier_spacing_hz", "must be >= 0"));
        }
        if !(self.antenna_spacing.is_finite() && self.antenna_spacing >= 0.0) {
            return Err(PsanError::config("radio.antenna_spacing", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridShape {
    pub packets: usize,
    pub subcarriers: usize,
    pub antennas: usize,
}

impl GridShape {
    pub fn new(packets: usize, subcarriers: usize, antennas: usize) -> Self {
        GridShape {
            packets,
            subcarriers,
            antennas,
        }
    }

    pub fn len(&self) -> usize {
        self.packets * self.subcarriers * self.antennas
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.packets == 0 || self.subcarriers == 0 || self.antennas == 0 {
            return Err(PsanError::InvalidGridShape([
                self.packets,
                self.subcarriers,
                self.antennas,
            ]));
        }
        Ok(())
    }
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape::new(256, 30, 3)
    }
}

/// Complex channel samples indexed `[packet][subcarrier][antenna]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiGrid {
    pub shape: GridShape,
    pub radio: RadioConfig,
    samples: Vec<Complex64>,
}

impl CsiGrid {
    pub fn from_samples(shape: GridShape, radio: RadioConfig, samples: Vec<Complex64>) -> Result<Self> {
        shape.validate()?;
        if samples.len() != shape.len() {
            return Err(PsanError::DimensionMismatch {
                expected: shape.len(),
                actual: samples.len(),
                context: "csi grid samples",
            });
        }
        if samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(PsanError::NonFinite("csi grid"));
        }
        Ok(CsiGrid {
            shape,
            radio,
            samples,
        })
    }

    #[inline]
    fn index(&self, t: usize, subcarrier: usize, antenna: usize) -> usize {
        (t * self.shape.subcarriers + subcarrier) * self.shape.antennas + antenna
    }

    #[inline]
    pub fn get(&self, t: usize, subcarrier: usize, antenna: usize) -> Complex64 {
        self.samples[self.index(t, subcarrier, antenna)]
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// Time series at a fixed subcarrier and antenna.
    pub fn series(&self, subcarrier: usize, antenna: usize) -> Vec<Complex64> {
        (0..self.shape.packets)
            .map(|t| self.get(t, subcarrier, antenna))
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> CsiGrid {
        CsiGrid {
            shape: self.shape,
            radio: self.radio,
            samples: self.samples.iter().map(|c| c * factor).collect(),
        }
    }
}

/// Doppler offset added to every dynamic path's `rho0` as a function of
/// normalised gesture time `u = t / T` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DfsTrajectory {
    Constant {
        hz: f64,
    },
    /// Linear sweep from `start_hz` to `end_hz`.
    Chirp {
        start_hz: f64,
        end_hz: f64,
    },
    Sinusoid {
        amplitude_hz: f64,
        cycles: f64,
        phase_rad: f64,
    },
    /// Raised-cosine pulse of height `peak_hz`, zero outside the window.
    Burst {
        peak_hz: f64,
        center: f64,
        width: f64,
    },
}

impl DfsTrajectory {
    pub fn offset_hz(&self, u: f64) -> f64 {
        match *self {
            DfsTrajectory::Constant { hz } => hz,
            DfsTrajectory::Chirp { start_hz, end_hz } => start_hz + (end_hz - start_hz) * u,
            DfsTrajectory::Sinusoid {
                amplitude_hz,
                cycles,
                phase_rad,
            } => amplitude_hz * (TAU * cycles * u + phase_rad).sin(),
            DfsTrajectory::Burst {
                peak_hz,
                center,
                width,
            } => peak_hz * raised_cosine(u, center, width),
        }
    }
}

/// Multiplicative factor on dynamic-path attenuation over normalised time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeEnvelope {
    Constant {
        gain: f64,
    },
    Ramp {
        start: f64,
        end: f64,
    },
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
    Oscillating {
        mean: f64,
        depth: f64,
        cycles: f64,
    },
}

impl AmplitudeEnvelope {
    pub fn factor(&self, u: f64) -> f64 {
        match *self {
            AmplitudeEnvelope::Constant { gain } => gain,
            AmplitudeEnvelope::Ramp { start, end } => start + (end - start) * u,
            AmplitudeEnvelope::Bump {
                base,
                peak,
                center,
                width,
            } => base + (peak - base) * raised_cosine(u, center, width),
            AmplitudeEnvelope::Oscillating {
                mean,
                depth,
                cycles,
            } => mean * (1.0 + depth * (TAU * cycles * u).sin()),
        }
    }
}

fn raised_cosine(u: f64, center: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    let x = (u - center) / width;
    if x.abs() >= 0.5 {
        0.0
    } else {
        0.5 * (1.0 + (TAU * x).cos())
    }
}

/// One performance of a gesture class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureSpec {
    pub class_id: usize,
    pub dfs: DfsTrajectory,
    pub amplitude: AmplitudeEnvelope,
}

impl GestureSpec {
    /// A gesture that leaves the dynamic paths at their base doppler shift and
    /// attenuation.
    pub fn idle(class_id: usize) -> Self {
        GestureSpec {
            class_id,
            dfs: DfsTrajectory::Constant { hz: 0.0 },
            amplitude: AmplitudeEnvelope::Constant { gain: 1.0 },
        }
    }
}

/// Synthesize one CSI grid.
pub fn synthesize<R: Rng + ?Sized>(
    profile: &SemanticProfile,
    gesture: &GestureSpec,
    shape: GridShape,
    radio: &RadioConfig,
    noise_std: f64,
    rng: &mut R,
) -> Result<CsiGrid> {
    shape.validate()?;
    radio.validate()?;
    if profile.static_paths.is_empty() {
        return Err(PsanError::EmptyStaticPaths);
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(PsanError::config("noise_std", "must be finite and >= 0"));
    }
    let GridShape {
        packets,
        subcarriers,
        antennas,
    } = shape;
    let dt = radio.packet_interval_s;
    let fc = radio.base_frequency_hz;
    let d = radio.antenna_spacing;

    // Spatial/frequency phase of a path, independent of time.
    let base_phasor = |delay: f64, aoa: f64, sub: usize, ant: usize| {
        let f = radio.subcarrier_frequency(sub);
        let tau = delay + ant as f64 * d * aoa / (TAU * fc);
        Complex64::from_polar(1.0, -TAU * f * tau)
    };

    let mut static_part = vec![Complex64::new(0.0, 0.0); subcarriers * antennas];
    for p in &profile.static_paths {
        for s in 0..subcarriers {
            for a in 0..antennas {
                static_part[s * antennas + a] += p.attenuation * base_phasor(p.delay_s, p.aoa_rad, s, a);
            }
        }
    }

    let times: Vec<f64> = (0..packets).map(|t| t as f64 / packets as f64).collect();
    let offsets: Vec<f64> = times.iter().map(|&u| gesture.dfs.offset_hz(u)).collect();
    let gains: Vec<f64> = times.iter().map(|&u| gesture.amplitude.factor(u)).collect();
    if offsets.iter().chain(&gains).any(|v| !v.is_finite()) {
        return Err(PsanError::NonFinite("gesture trajectory"));
    }
    if let Some(g) = gains.iter().find(|g| **g < 0.0) {
        return Err(PsanError::config(
            "gesture.amplitude",
            format!("amplitude factor {g} is negative"),
        ));
    }

    // Per dynamic path: spatial phasors and the time-varying rotation.
    let mut dynamic: Vec<(Vec<Complex64>, Vec<Complex64>)> = Vec::new();
    for p in &profile.dynamic_paths {
        let mut spatial = vec![Complex64::new(0.0, 0.0); subcarriers * antennas];
        for s in 0..subcarriers {
            for a in 0..antennas {
                spatial[s * antennas + a] = base_phasor(p.delay_s, p.aoa_rad, s, a);
            }
        }
        let mut phase_cycles = 0.0;
        let mut temporal = Vec::with_capacity(packets);
        for t in 0..packets {
            if t > 0 {
                let prev = p.dfs_hz + offsets[t - 1];
                let cur = p.dfs_hz + offsets[t];
                phase_cycles += 0.5 * (prev + cur) * dt;
            }
            let amp = p.attenuation * gains[t];
            temporal.push(Complex64::from_polar(amp, TAU * phase_cycles));
        }
        dynamic.push((spatial, temporal));
    }

    let mut samples = Vec::with_capacity(shape.len());
    for t in 0..packets {
        for (i, &stat) in static_part.iter().enumerate() {
            let mut h = stat;
            for (spatial, temporal) in &dynamic {
                h += temporal[t] * spatial[i];
            }
            samples.push(h);
        }
    }

    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std / 2f64.sqrt())
            .map_err(|e| PsanError::config("noise_std", e.to_string()))?;
        for h in samples.iter_mut() {
            let re = normal.sample(rng);
            let im = normal.sample(rng);
            *h += Complex64::new(re, im);
        }
    }

    CsiGrid::from_samples(shape, *radio, samples)
}
