//! Zero-shot models for target receivers.
//!
//! For a target, every source receives the raw weight `R'(d)` where `d` is
//! the squared model distance implied by the mapping's prediction for the
//! pair's semantic similarity: `2 (1 - g)` when the mapping predicts cosine
//! similarity `g` (the squared distance between unit vectors), and `g^2` when
//! it predicts a Euclidean distance. The weights are normalized onto the
//! simplex and the target model is the corresponding convex combination of
//! the final source models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{PsanError, Result};
use crate::mapping::{MappingModel, TrainingPair};
use crate::metric::{self, Metric};
use crate::model::ModelVector;
use crate::train::{attention_r_prime, weighted_average};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub target_id: usize,
    pub source_ids: Vec<usize>,
    /// Semantic similarity or distance between target and each source.
    pub semantic: Vec<f64>,
    /// Mapping prediction for each source.
    pub predicted: Vec<f64>,
    /// `R'` of the implied squared model distance.
    pub raw: Vec<f64>,
    /// Normalized coefficients.
    pub xi: Vec<f64>,
}

/// Bandwidth of `R'` at transfer time: `scale` times the median implied
/// squared distance of the mapping's training pairs.
pub fn transfer_bandwidth(pairs: &[TrainingPair], metric: Metric, scale: f64) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(PsanError::config("transfer.bandwidth_scale", "must be > 0"));
    }
    let mut d: Vec<f64> = pairs.iter().map(|p| metric.to_squared_distance(p.m)).collect();
    if d.is_empty() {
        return Err(PsanError::DegeneratePairs);
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Ok(if median > 0.0 { scale * median } else { scale })
}

pub fn compute_weights(
    target_id: usize,
    target_embedding: &[f64],
    sources: &[(usize, &[f64])],
    mapping: &MappingModel,
    bandwidth: f64,
    metric: Metric,
) -> Result<AggregationWeights> {
    if mapping.metric != metric {
        return Err(PsanError::MetricMismatch {
            fitted: mapping.metric.to_string(),
            requested: metric.to_string(),
        });
    }
    if sources.is_empty() {
        return Err(PsanError::TooFewSources { needed: 1, actual: 0 });
    }
    let mut w = AggregationWeights {
        target_id,
        source_ids: Vec::with_capacity(sources.len()),
        semantic: Vec::with_capacity(sources.len()),
        predicted: Vec::with_capacity(sources.len()),
        raw: Vec::with_capacity(sources.len()),
        xi: Vec::with_capacity(sources.len()),
    };
    let mut exponents = Vec::with_capacity(sources.len());
    for &(id, emb) in sources {
        let s = metric::compare(target_embedding, emb, metric, "semantic distance")?;
        let g = mapping.eval(s);
        let d = metric.to_squared_distance(g);
        w.source_ids.push(id);
        w.semantic.push(s);
        w.predicted.push(g);
        w.raw.push(attention_r_prime(d, bandwidth)?);
        exponents.push(-d / bandwidth);
    }
    // normalize in log space; raw weights may underflow, their ratios do not
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    assert!(total >= 1.0, "largest shifted weight is exactly 1");
    w.xi = shifted.into_iter().map(|v| v / total).collect();
    Ok(w)
}

/// Convex combination of the source models with the given coefficients.
pub fn aggregate(weights: &AggregationWeights, sources: &[ModelVector]) -> Result<ModelVector> {
    if sources.len() != weights.xi.len() {
        return Err(PsanError::DimensionMismatch {
            expected: weights.xi.len(),
            actual: sources.len(),
            context: "aggregation sources",
        });
    }
    let arch = sources[0].arch;
    if let Some(m) = sources.iter().find(|m| m.arch != arch) {
        return Err(PsanError::ArchMismatch(format!("{} vs {}", arch, m.arch)));
    }
    Ok(weighted_average(sources, &weights.xi))
}

/// Audit CSV with one row per (target, source).
pub fn write_weights_csv<W: Write>(all: &[AggregationWeights], mut w: W) -> Result<()> {
    writeln!(w, "target_id,source_id,S,G,raw_w,xi")?;
    for a in all {
        for k in 0..a.source_ids.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                a.target_id, a.source_ids[k], a.semantic[k], a.predicted[k], a.raw[k], a.xi[k]
            )?;
        }
    }
    Ok(())
}
