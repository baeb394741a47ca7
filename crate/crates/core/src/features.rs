//! Hand-crafted CSI features.
//!
//! Layout of the feature vector (dimension `2*S + B + 3*(A-1)` for `S`
//! subcarriers, `B` doppler bins and `A` antennas):
//!
//! 1. `S` amplitude means: `|H|` averaged over packets, then over antennas.
//! 2. `S` amplitude standard deviations over packets, averaged over antennas.
//! 3. `B` doppler features from the DFT over packets of antenna 0 at the centre
//!    subcarrier. Feature 0 is the share of power in the zero-frequency bin.
//!    The remaining bins group the non-zero DFT frequencies into log-spaced
//!    bands between the DFT resolution and `dfs_max_hz` (the last band is
//!    open-ended); negative frequencies take the first `(B-1)/2` bands in order
//!    of increasing magnitude, positive frequencies the rest. Each band holds
//!    its share of the non-zero-frequency power, so a moving reflector yields a
//!    unit-sum doppler profile regardless of its strength.
//! 4. For each antenna `a >= 1`: real part, imaginary part and magnitude of the
//!    mean unit phasor of `H_a * conj(H_0)` over packets and subcarriers.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiGrid, GridShape};
use crate::error::{PsanError, Result};

/// Non-zero-frequency power below this fraction of total power counts as no
/// motion at all.
const MOTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub shape: GridShape,
    pub dfs_bins: usize,
    pub dfs_max_hz: f64,
}

impl FeatureSpec {
    pub fn new(shape: GridShape) -> Self {
        FeatureSpec {
            shape,
            dfs_bins: 16,
            dfs_max_hz: 80.0,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.shape.subcarriers + self.dfs_bins + 3 * (self.shape.antennas - 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.dfs_bins < 3 {
            return Err(PsanError::config("features.dfs_bins", "need at least 3 bins"));
        }
        if !(self.dfs_max_hz.is_finite() && self.dfs_max_hz > 0.0) {
            return Err(PsanError::config("features.dfs_max_hz", "must be positive"));
        }
        Ok(())
    }

    fn negative_bands(&self) -> usize {
        (self.dfs_bins - 1) / 2
    }

    fn positive_bands(&self) -> usize {
        self.dfs_bins - 1 - self.negative_bands()
    }

    /// Doppler band (index into the `B` doppler features) of a signed
    /// frequency, given the DFT resolution.
    pub fn dfs_band(&self, freq_hz: f64, resolution_hz: f64) -> usize {
        if freq_hz == 0.0 {
            return 0;
        }
        let bands = if freq_hz < 0.0 {
            self.negative_bands()
        } else {
            self.positive_bands()
        };
        let span = (self.dfs_max_hz / resolution_hz).ln();
        let within = if span <= 0.0 {
            bands - 1
        } else {
            let x = (freq_hz.abs() / resolution_hz).ln() / span;
            ((x * bands as f64).floor().max(0.0) as usize).min(bands - 1)
        };
        if freq_hz < 0.0 {
            1 + within
        } else {
            1 + self.negative_bands() + within
        }
    }
}

pub fn extract_features(grid: &CsiGrid, spec: &FeatureSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if grid.shape != spec.shape {
        return Err(PsanError::DimensionMismatch {
            expected: spec.shape.len(),
            actual: grid.shape.len(),
            context: "feature spec grid shape",
        });
    }
    let GridShape {
        packets,
        subcarriers,
        antennas,
    } = grid.shape;
    let mut out = Vec::with_capacity(spec.dim());

    let n = packets as f64;
    let mut means = vec![0.0; subcarriers];
    let mut stds = vec![0.0; subcarriers];
    for s in 0..subcarriers {
        for a in 0..antennas {
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for t in 0..packets {
                let m = grid.get(t, s, a).norm();
                sum += m;
                sum_sq += m * m;
            }
            let mean = sum / n;
            means[s] += mean;
            stds[s] += (sum_sq / n - mean * mean).max(0.0).sqrt();
        }
        means[s] /= antennas as f64;
        stds[s] /= antennas as f64;
    }
    out.extend_from_slice(&means);
    out.extend_from_slice(&stds);

    out.extend(doppler_profile(&grid.series(subcarriers / 2, 0), grid.radio.sampling_rate_hz(), spec));

    for a in 1..antennas {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut count = 0usize;
        for t in 0..packets {
            for s in 0..subcarriers {
                let z = grid.get(t, s, a) * grid.get(t, s, 0).conj();
                let m = z.norm();
                if m > 0.0 {
                    acc += z / m;
                    count += 1;
                }
            }
        }
        if count > 0 {
            acc /= count as f64;
        }
        out.extend([acc.re, acc.im, acc.norm()]);
    }
    debug_assert_eq!(out.len(), spec.dim());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PsanError::NonFinite("features"));
    }
    Ok(out)
}

fn doppler_profile(series: &[Complex64], sampling_rate: f64, spec: &FeatureSpec) -> Vec<f64> {
    let n = series.len();
    let mut buf = series.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let resolution = sampling_rate / n as f64;
    let norm = (n * n) as f64;

    let mut bands = vec![0.0; spec.dfs_bins];
    for (k, x) in buf.iter().enumerate() {
        let power = x.norm_sqr() / norm;
        let freq = if k <= n / 2 {
            k as f64 * resolution
        } else {
            (k as f64 - n as f64) * resolution
        };
        bands[spec.dfs_band(freq, resolution)] += power;
    }
    let total: f64 = bands.iter().sum();
    if total == 0.0 {
        return bands;
    }
    let moving: f64 = bands[1..].iter().sum();
    let denom = moving.max(MOTION_FLOOR * total);
    bands[0] /= total;
    for b in &mut bands[1..] {
        *b /= denom;
    }
    bands
}
