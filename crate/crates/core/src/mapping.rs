//! Regression from semantic similarity to model similarity.
//!
//! Each ordered pair of source receivers `(i, j)` yields one training pair:
//! the similarity of their semantic embeddings and the similarity of their
//! trained models, both under the same metric. A scalar network
//! `1 -> h -> 1` with tanh hidden units is fit to these pairs by full-batch
//! gradient descent on the mean squared error.
//!
//! Inputs and outputs are standardized with the training statistics. The
//! output layer starts at zero, so the initial fit is the mean of the
//! targets, and the best iterate seen is kept, so the fit never does worse on
//! the training pairs than that constant predictor.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PsanError, Result};
use crate::metric::{self, Metric};
use crate::model::{model_distance, ModelVector};
use crate::rng::{self, tag};

pub const MAPPING_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub i: usize,
    pub j: usize,
    /// Semantic similarity (cosine) or distance (euclidean).
    pub s: f64,
    /// Model similarity or distance under the same metric.
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Set from the run's master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            hidden: 8,
            epochs: 5000,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(PsanError::config("mapping.hidden", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PsanError::config("mapping.learning_rate", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    pub version: u32,
    pub metric: Metric,
    pub hidden: usize,
    /// Input weights, input biases, output weights (each `hidden` long),
    /// then the output bias, all in standardized units.
    pub params: Vec<f64>,
    pub input_shift: f64,
    pub input_scale: f64,
    pub output_shift: f64,
    pub output_scale: f64,
    pub train_rmse: f64,
}

/// All ordered pairs `(i, j)`, `i != j`, in lexicographic order. `ids` are
/// the receiver ids attached to the embeddings and models.
pub fn build_pairs(
    ids: &[usize],
    embeddings: &[Vec<f64>],
    models: &[ModelVector],
    metric: Metric,
) -> Result<Vec<TrainingPair>> {
    let k = ids.len();
    if embeddings.len() != k || models.len() != k {
        return Err(PsanError::DimensionMismatch {
            expected: k,
            actual: embeddings.len().min(models.len()),
            context: "pair construction inputs",
        });
    }
    if k < 2 {
        return Err(PsanError::TooFewSources { needed: 2, actual: k });
    }
    let mut pairs = Vec::with_capacity(k * (k - 1));
    for a in 0..k {
        for b in 0..k {
            if a != b {
                pairs.push(TrainingPair {
                    i: ids[a],
                    j: ids[b],
                    s: metric::compare(&embeddings[a], &embeddings[b], metric, "semantic distance")?,
                    m: model_distance(&models[a], &models[b], metric)?,
                });
            }
        }
    }
    Ok(pairs)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean squared error over standardized pairs `(u, y)` and its gradient.
pub fn mapping_loss_and_grad(params: &[f64], hidden: usize, data: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let (a, rest) = params.split_at(hidden);
    let (b, rest) = rest.split_at(hidden);
    let (v, c) = rest.split_at(hidden);
    let c = c[0];
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / data.len() as f64;
    let mut act = vec![0.0; hidden];
    for &(u, y) in data {
        let mut out = c;
        for j in 0..hidden {
            act[j] = (a[j] * u + b[j]).tanh();
            out += v[j] * act[j];
        }
        let r = out - y;
        loss += r * r * scale;
        let dr = 2.0 * r * scale;
        for j in 0..hidden {
            let dz = dr * v[j] * (1.0 - act[j] * act[j]);
            grad[j] += dz * u;
            grad[hidden + j] += dz;
            grad[2 * hidden + j] += dr * act[j];
        }
        grad[3 * hidden] += dr;
    }
    (loss, grad)
}

pub fn fit_mapping(pairs: &[TrainingPair], metric: Metric, config: &MappingConfig) -> Result<MappingModel> {
    config.validate()?;
    if pairs.iter().any(|p| !p.s.is_finite() || !p.m.is_finite()) {
        return Err(PsanError::NonFinite("mapping training pairs"));
    }
    let first = pairs.first().ok_or(PsanError::DegeneratePairs)?.s;
    if pairs.iter().all(|p| p.s == first) {
        return Err(PsanError::DegeneratePairs);
    }
    let (in_shift, in_scale) = mean_std(pairs.iter().map(|p| p.s));
    let (out_shift, out_std) = mean_std(pairs.iter().map(|p| p.m));
    let out_scale = if out_std > 0.0 { out_std } else { 1.0 };
    let data: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| ((p.s - in_shift) / in_scale, (p.m - out_shift) / out_scale))
        .collect();

    let h = config.hidden;
    let mut stream = rng::stream(config.seed, &[tag::MAPPING]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut params = vec![0.0; 3 * h + 1];
    for p in params[..2 * h].iter_mut() {
        *p = normal.sample(&mut stream);
    }
    let (mut best_loss, _) = mapping_loss_and_grad(&params, h, &data);
    let mut best = params.clone();
    for _ in 0..config.epochs {
        let (loss, grad) = mapping_loss_and_grad(&params, h, &data);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&params);
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            break;
        }
    }
    let (final_loss, _) = mapping_loss_and_grad(&params, h, &data);
    if final_loss.is_finite() && final_loss < best_loss {
        best = params;
    }
    let mut model = MappingModel {
        version: MAPPING_VERSION,
        metric,
        hidden: h,
        params: best,
        input_shift: in_shift,
        input_scale: in_scale,
        output_shift: out_shift,
        output_scale: out_scale,
        train_rmse: 0.0,
    };
    model.train_rmse = rmse(&model, pairs);
    Ok(model)
}

impl MappingModel {
    /// Network output before clamping.
    pub fn raw(&self, s: f64) -> f64 {
        let h = self.hidden;
        let u = (s - self.input_shift) / self.input_scale;
        let mut out = self.params[3 * h];
        for j in 0..h {
            out += self.params[2 * h + j] * (self.params[j] * u + self.params[h + j]).tanh();
        }
        out * self.output_scale + self.output_shift
    }

    /// Predicted model similarity or distance, clamped to the metric's range.
    pub fn eval(&self, s: f64) -> f64 {
        let (lo, hi) = self.metric.range();
        self.raw(s).clamp(lo, hi)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MAPPING_VERSION {
            return Err(PsanError::UnsupportedVersion {
                kind: "mapping checkpoint",
                found: version,
                expected: MAPPING_VERSION,
            });
        }
        let m: MappingModel = serde_json::from_value(value)?;
        if m.params.len() != 3 * m.hidden + 1 || m.params.iter().any(|p| !p.is_finite()) {
            return Err(PsanError::Malformed {
                kind: "mapping checkpoint",
                message: "parameter vector does not match the hidden width".into(),
            });
        }
        Ok(m)
    }
}

/// Root mean squared error of the clamped prediction.
pub fn rmse(model: &MappingModel, pairs: &[TrainingPair]) -> f64 {
    let sse: f64 = pairs.iter().map(|p| (model.eval(p.s) - p.m).powi(2)).sum();
    (sse / pairs.len() as f64).sqrt()
}

/// Fit without all pairs involving one receiver, score on exactly those
/// pairs. Returns `(receiver, rmse)` per held-out receiver.
pub fn leave_one_receiver_out(
    pairs: &[TrainingPair],
    metric: Metric,
    config: &MappingConfig,
) -> Result<Vec<(usize, f64)>> {
    let mut ids: Vec<usize> = pairs.iter().map(|p| p.i).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|held| {
            let (test, train): (Vec<TrainingPair>, Vec<TrainingPair>) =
                pairs.iter().partition(|p| p.i == held || p.j == held);
            let model = fit_mapping(&train, metric, config)?;
            Ok((held, rmse(&model, &test)))
        })
        .collect()
}

/// CSV of `s,m_target,g_hat` for every pair.
pub fn write_diagnostics_csv<W: Write>(model: &MappingModel, pairs: &[TrainingPair], mut w: W) -> Result<()> {
    writeln!(w, "i,j,s,m_target,g_hat")?;
    for p in pairs {
        writeln!(w, "{},{},{},{},{}", p.i, p.j, p.s, p.m, model.eval(p.s))?;
    }
    Ok(())
}
