//! Cosine similarity and Euclidean distance over flat real vectors.

use serde::{Deserialize, Serialize};

use crate::error::{PsanError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Cosine similarity in [-1, 1]; 1 means identical direction.
    Cosine,
    /// Euclidean distance, >= 0.
    Euclidean,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Valid output interval of the metric.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Cosine => (-1.0, 1.0),
            Metric::Euclidean => (0.0, f64::INFINITY),
        }
    }

    /// Convert a metric value between two models into the squared-distance
    /// argument consumed by the attention derivative.
    ///
    /// Cosine similarity `s` becomes `2 (1 - s)`, the squared distance between
    /// the unit-normalised vectors. A Euclidean distance is squared.
    pub fn to_squared_distance(self, value: f64) -> f64 {
        match self {
            Metric::Cosine => 2.0 * (1.0 - value.clamp(-1.0, 1.0)),
            Metric::Euclidean => {
                let v = value.max(0.0);
                v * v
            }
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = PsanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(PsanError::config("metric", format!("unknown metric `{other}`"))),
        }
    }
}

/// Compare two vectors under `metric`.
///
/// Symmetric by construction: the dot product and the squared differences are
/// accumulated in index order, which is identical for both argument orders.
pub fn compare(a: &[f64], b: &[f64], metric: Metric, context: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PsanError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
            context,
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(PsanError::NonFinite(context));
    }
    match metric {
        Metric::Cosine => {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                return Err(PsanError::ZeroVector);
            }
            // na*nb is symmetric, so the quotient is too.
            Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
        }
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
