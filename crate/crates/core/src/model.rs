//! Per-receiver gesture classifier.
//!
//! Two architectures share one flat parameter vector:
//!
//! * `hidden = 0`: multinomial logistic regression, `logits = W x + b`.
//!   Parameters are `W` (classes x F, row-major) followed by `b`.
//! * `hidden = h > 0`: `logits = W2 tanh(W1 x + b1) + b2`. Parameters are
//!   `W1` (h x F), `b1`, `W2` (classes x h), `b2`, each row-major.
//!
//! The loss is the mean cross-entropy over a batch plus `(l2 / 2) * |w|^2`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::error::{PsanError, Result};
use crate::metric::{self, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Arch {
    pub fn new(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Arch {
            input_dim,
            hidden,
            classes,
        }
    }

    pub fn param_count(&self) -> usize {
        let (f, h, c) = (self.input_dim, self.hidden, self.classes);
        if h == 0 {
            f * c + c
        } else {
            f * h + h + h * c + c
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(PsanError::ArchMismatch(format!(
                "need input_dim >= 1 and classes >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "F={} h={} classes={}", self.input_dim, self.hidden, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub arch: Arch,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub l2: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { l2: 1e-3 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(PsanError::config("loss.l2", "must be finite and >= 0"));
        }
        Ok(())
    }
}

impl ModelVector {
    pub fn new(arch: Arch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(PsanError::DimensionMismatch {
                expected: arch.param_count(),
                actual: params.len(),
                context: "model parameters",
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(PsanError::NonFinite("model parameters"));
        }
        Ok(ModelVector { arch, params })
    }

    pub fn zeros(arch: Arch) -> Self {
        ModelVector {
            arch,
            params: vec![0.0; arch.param_count()],
        }
    }

    /// Parameters drawn i.i.d. from `N(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(arch: Arch, std: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| PsanError::config("init_std", e.to_string()))?;
        let params = (0..arch.param_count()).map(|_| normal.sample(rng)).collect();
        Ok(ModelVector { arch, params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(PsanError::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: x.len(),
                context: "model input",
            });
        }
        Ok(())
    }

    /// Logits plus, for the hidden-layer variant, the hidden activations.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>, logits: &mut Vec<f64>) {
        let Arch {
            input_dim: f,
            hidden: h,
            classes: c,
        } = self.arch;
        let p = &self.params;
        logits.clear();
        hidden.clear();
        if h == 0 {
            for k in 0..c {
                logits.push(metric::dot(&p[k * f..(k + 1) * f], x) + p[c * f + k]);
            }
        } else {
            let (w1, rest) = p.split_at(h * f);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for j in 0..h {
                hidden.push((metric::dot(&w1[j * f..(j + 1) * f], x) + b1[j]).tanh());
            }
            for k in 0..c {
                logits.push(metric::dot(&w2[k * h..(k + 1) * h], hidden) + b2[k]);
            }
        }
    }
}

/// In-place softmax, shifted by the maximum for stability.
fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Class probabilities for one feature vector.
pub fn predict(model: &ModelVector, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    if model.params.iter().any(|v| !v.is_finite()) {
        return Err(PsanError::NonFinite("model parameters"));
    }
    let (mut hidden, mut probs) = (Vec::new(), Vec::new());
    model.forward(x, &mut hidden, &mut probs);
    softmax(&mut probs);
    Ok(probs)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict_class(model: &ModelVector, x: &[f64]) -> Result<usize> {
    Ok(argmax(&predict(model, x)?))
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(model: &ModelVector, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(PsanError::EmptyBatch);
    }
    let mut correct = 0usize;
    for s in samples {
        if predict_class(model, &s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean cross-entropy plus `(l2 / 2) |w|^2`, and its gradient.
pub fn loss_and_grad(model: &ModelVector, batch: &[LabeledSample], spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    let refs: Vec<&LabeledSample> = batch.iter().collect();
    loss_and_grad_refs(model, &refs, spec)
}

/// [`loss_and_grad`] over a batch of borrowed samples.
pub fn loss_and_grad_refs(model: &ModelVector, batch: &[&LabeledSample], spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(PsanError::EmptyBatch);
    }
    let Arch {
        input_dim: f,
        hidden: h,
        classes: c,
    } = model.arch;
    let mut grad = vec![0.0; model.dim()];
    let mut loss = 0.0;
    let (mut hidden, mut probs) = (Vec::with_capacity(h), Vec::with_capacity(c));
    let mut delta_hidden = vec![0.0; h];
    let scale = 1.0 / batch.len() as f64;
    for &s in batch {
        model.check_input(&s.features)?;
        if s.label >= c {
            return Err(PsanError::LabelOutOfRange {
                label: s.label,
                classes: c,
            });
        }
        let x = &s.features;
        model.forward(x, &mut hidden, &mut probs);
        softmax(&mut probs);
        loss -= probs[s.label].max(f64::MIN_POSITIVE).ln();
        probs[s.label] -= 1.0;
        let dz = &probs;
        if h == 0 {
            for k in 0..c {
                let g = dz[k] * scale;
                for (gi, xi) in grad[k * f..(k + 1) * f].iter_mut().zip(x) {
                    *gi += g * xi;
                }
                grad[c * f + k] += g;
            }
        } else {
            let w2_off = h * f + h;
            let b2_off = w2_off + c * h;
            delta_hidden.iter_mut().for_each(|d| *d = 0.0);
            for k in 0..c {
                let g = dz[k] * scale;
                let w2_row = &model.params[w2_off + k * h..w2_off + (k + 1) * h];
                for j in 0..h {
                    grad[w2_off + k * h + j] += g * hidden[j];
                    delta_hidden[j] += g * w2_row[j];
                }
                grad[b2_off + k] += g;
            }
            for j in 0..h {
                let d = delta_hidden[j] * (1.0 - hidden[j] * hidden[j]);
                for (gi, xi) in grad[j * f..(j + 1) * f].iter_mut().zip(x) {
                    *gi += d * xi;
                }
                grad[h * f + j] += d;
            }
        }
    }
    loss *= scale;
    if spec.l2 > 0.0 {
        loss += 0.5 * spec.l2 * metric::dot(&model.params, &model.params);
        for (g, w) in grad.iter_mut().zip(&model.params) {
            *g += spec.l2 * w;
        }
    }
    if !loss.is_finite() {
        return Err(PsanError::NonFinite("loss"));
    }
    Ok((loss, grad))
}

/// Similarity or distance between two models' flattened parameters.
pub fn model_distance(a: &ModelVector, b: &ModelVector, metric: Metric) -> Result<f64> {
    if a.arch != b.arch {
        return Err(PsanError::ArchMismatch(format!("{} vs {}", a.arch, b.arch)));
    }
    metric::compare(&a.params, &b.params, metric, "model distance")
}

/// Upper estimate of the gradient Lipschitz constant of the loss for the
/// logistic-regression architecture: half the largest eigenvalue of the
/// second-moment matrix of `[x; 1]`, plus `l2`. The softmax cross-entropy
/// Hessian with respect to the logits is bounded by `I / 2`.
pub fn smoothness_bound(samples: &[LabeledSample], spec: &LossSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(PsanError::EmptyBatch);
    }
    let n = samples[0].features.len() + 1;
    let mut gram = vec![0.0; n * n];
    for s in samples {
        let x: Vec<f64> = s.features.iter().cloned().chain(std::iter::once(1.0)).collect();
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += x[i] * x[j];
            }
        }
    }
    gram.iter_mut().for_each(|g| *g /= samples.len() as f64);
    Ok(0.5 * largest_eigenvalue(&gram, n) + spec.l2)
}

/// Power iteration on a symmetric positive semi-definite matrix, returning a
/// value that is never below the true largest eigenvalue by more than the
/// residual bound.
fn largest_eigenvalue(m: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        for i in 0..n {
            w[i] = metric::dot(&m[i * n..(i + 1) * n], &v);
        }
        let norm = metric::dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let rayleigh = metric::dot(&v, &w);
        let residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - rayleigh * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        lambda = rayleigh + residual;
        for i in 0..n {
            v[i] = w[i] / norm;
        }
        if residual <= 1e-12 * rayleigh.abs().max(1.0) {
            break;
        }
    }
    lambda
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSNM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout (little-endian): magic `PSNM`, `u32` version, `u64` input dim,
/// hidden width, classes and parameter count, then the parameters as `f64`.
pub fn write_checkpoint<W: Write>(model: &ModelVector, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [model.arch.input_dim, model.arch.hidden, model.arch.classes, model.dim()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(model.dim() * 8);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelVector> {
    let malformed = |m: &str| PsanError::Malformed {
        kind: "model checkpoint",
        message: m.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(PsanError::UnsupportedVersion {
            kind: "model checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut header = [0usize; 4];
    let mut eight = [0u8; 8];
    for h in header.iter_mut() {
        r.read_exact(&mut eight)?;
        *h = usize::try_from(u64::from_le_bytes(eight)).map_err(|_| malformed("header value overflows"))?;
    }
    let arch = Arch::new(header[0], header[1], header[2]);
    if header[3] != arch.param_count() {
        return Err(malformed("parameter count does not match the architecture"));
    }
    let mut params = Vec::with_capacity(header[3]);
    for _ in 0..header[3] {
        r.read_exact(&mut eight)?;
        params.push(f64::from_le_bytes(eight));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(malformed("trailing bytes after parameters"));
    }
    ModelVector::new(arch, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(x: Vec<f64>, y: usize) -> LabeledSample {
        LabeledSample {
            receiver_id: 0,
            features: x,
            label: y,
        }
    }

    fn random_batch(f: usize, c: usize, n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut r = rng::stream(seed, &[7]);
        (0..n)
            .map(|i| sample((0..f).map(|_| r.random_range(-1.0..1.0)).collect(), i % c))
            .collect()
    }

    #[test]
    fn param_counts() {
        assert_eq!(Arch::new(82, 0, 6).param_count(), 82 * 6 + 6);
        assert_eq!(Arch::new(82, 8, 6).param_count(), 82 * 8 + 8 + 8 * 6 + 6);
    }

    #[test]
    fn zero_params_give_uniform_prediction() {
        let m = ModelVector::zeros(Arch::new(3, 0, 4));
        let p = predict(&m, &[0.3, -1.0, 2.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(argmax(&p), 0);
        let m = ModelVector::zeros(Arch::new(3, 8, 4));
        let p = predict(&m, &[0.3, -1.0, 2.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_class_equal_logits() {
        for z in [-50.0, 0.0, 3.7, 700.0] {
            // weights zero, biases both z
            let m = ModelVector::new(Arch::new(2, 0, 2), vec![0.0, 0.0, 0.0, 0.0, z, z]).unwrap();
            let p = predict(&m, &[1.0, 2.0]).unwrap();
            assert_eq!(p, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn hand_set_logits_one_zero() {
        // W = [[1, 0], [0, 0]], b = 0, x = (1, 5): logits (1, 0)
        let m = ModelVector::new(Arch::new(2, 0, 2), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let p = predict(&m, &[1.0, 5.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_loss_is_log_classes() {
        for c in [2, 6] {
            let m = ModelVector::zeros(Arch::new(5, 0, c));
            let (l, _) = loss_and_grad(&m, &random_batch(5, c, 7, 1), &LossSpec { l2: 0.0 }).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    fn finite_difference_check(hidden: usize) {
        let arch = Arch::new(4, hidden, 3);
        let batch = random_batch(4, 3, 9, 2);
        let spec = LossSpec { l2: 0.01 };
        let mut r = rng::stream(3, &[hidden as u64]);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let m = ModelVector::random(arch, 0.5, &mut r).unwrap();
            let (_, g) = loss_and_grad(&m, &batch, &spec).unwrap();
            for i in 0..m.dim() {
                let step = 1e-5;
                let mut plus = m.clone();
                plus.params[i] += step;
                let mut minus = m.clone();
                minus.params[i] -= step;
                let fd = (loss_and_grad(&plus, &batch, &spec).unwrap().0 - loss_and_grad(&minus, &batch, &spec).unwrap().0)
                    / (2.0 * step);
                let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_linear() {
        finite_difference_check(0);
    }

    #[test]
    fn gradient_matches_finite_differences_hidden() {
        finite_difference_check(8);
    }

    #[test]
    fn duplicating_batch_changes_nothing() {
        let mut r = rng::stream(4, &[4]);
        for h in [0, 8] {
            let m = ModelVector::random(Arch::new(4, h, 3), 0.3, &mut r).unwrap();
            let batch = random_batch(4, 3, 5, 5);
            let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
            let spec = LossSpec { l2: 0.1 };
            let (l1, g1) = loss_and_grad(&m, &batch, &spec).unwrap();
            let (l2, g2) = loss_and_grad(&m, &doubled, &spec).unwrap();
            assert!((l1 - l2).abs() < 1e-14);
            assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn errors() {
        let m = ModelVector::zeros(Arch::new(2, 0, 2));
        assert!(matches!(loss_and_grad(&m, &[], &LossSpec::default()), Err(PsanError::EmptyBatch)));
        assert!(predict(&m, &[1.0]).is_err());
        let mut bad = m.clone();
        bad.params[0] = f64::NAN;
        assert!(matches!(predict(&bad, &[1.0, 1.0]), Err(PsanError::NonFinite(_))));
        let other = ModelVector::zeros(Arch::new(2, 1, 2));
        assert!(matches!(model_distance(&m, &other, Metric::Cosine), Err(PsanError::ArchMismatch(_))));
        assert!(matches!(model_distance(&m, &m, Metric::Cosine), Err(PsanError::ZeroVector)));
        assert!(ModelVector::new(Arch::new(2, 0, 2), vec![0.0; 5]).is_err());
    }

    #[test]
    fn model_distance_identity_and_scale() {
        let mut r = rng::stream(5, &[5]);
        let w = ModelVector::random(Arch::new(6, 0, 3), 1.0, &mut r).unwrap();
        let mut w2 = w.clone();
        w2.params.iter_mut().for_each(|p| *p *= 2.0);
        assert!((model_distance(&w, &w, Metric::Cosine).unwrap() - 1.0).abs() < 1e-12);
        assert!((model_distance(&w, &w2, Metric::Cosine).unwrap() - 1.0).abs() < 1e-12);
        let norm = w.params.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!((model_distance(&w, &w2, Metric::Euclidean).unwrap() - norm).abs() < 1e-12);
    }

    #[test]
    fn model_distance_against_compensated_sums() {
        // Neumaier-compensated evaluation of the cosine and Euclidean formulas.
        fn ksum(xs: impl Iterator<Item = f64>) -> f64 {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for x in xs {
                let t = s + x;
                c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
                s = t;
            }
            s + c
        }
        let mut r = rng::stream(6, &[6]);
        let a = ModelVector::random(Arch::new(10, 0, 4), 1.0, &mut r).unwrap();
        let b = ModelVector::random(Arch::new(10, 0, 4), 1.0, &mut r).unwrap();
        let ab = ksum(a.params.iter().zip(&b.params).map(|(x, y)| x * y));
        let aa = ksum(a.params.iter().map(|x| x * x));
        let bb = ksum(b.params.iter().map(|x| x * x));
        let dd = ksum(a.params.iter().zip(&b.params).map(|(x, y)| (x - y) * (x - y)));
        assert!((model_distance(&a, &b, Metric::Cosine).unwrap() - ab / (aa.sqrt() * bb.sqrt())).abs() < 1e-12);
        assert!((model_distance(&a, &b, Metric::Euclidean).unwrap() - dd.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn strong_convexity_and_smoothness_hold() {
        let spec = LossSpec { l2: 0.05 };
        let batch = random_batch(5, 3, 12, 8);
        let l = smoothness_bound(&batch, &spec).unwrap();
        let mu = spec.l2;
        let arch = Arch::new(5, 0, 3);
        let mut r = rng::stream(9, &[9]);
        for _ in 0..200 {
            let v = ModelVector::random(arch, 2.0, &mut r).unwrap();
            let w = ModelVector::random(arch, 2.0, &mut r).unwrap();
            let (fv, gw) = (loss_and_grad(&v, &batch, &spec).unwrap().0, loss_and_grad(&w, &batch, &spec).unwrap());
            let diff: Vec<f64> = v.params.iter().zip(&w.params).map(|(a, b)| a - b).collect();
            let sq = metric::dot(&diff, &diff);
            let lin = gw.0 + metric::dot(&gw.1, &diff);
            assert!(fv >= lin + 0.5 * mu * sq - 1e-10);
            assert!(fv <= lin + 0.5 * l * sq + 1e-10);
        }
    }

    #[test]
    fn power_iteration_on_known_matrix() {
        // eigenvalues of [[2, 1], [1, 2]] are 3 and 1
        let lambda = largest_eigenvalue(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((lambda - 3.0).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_roundtrip_and_rejects() {
        let mut r = rng::stream(10, &[10]);
        let m = ModelVector::random(Arch::new(3, 2, 2), 1.0, &mut r).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 32 + 8 * m.dim());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
        let mut v = buf.clone();
        v[4] = 2;
        assert!(matches!(read_checkpoint(&v[..]), Err(PsanError::UnsupportedVersion { .. })));
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_normalized(logit_seed in 0u64..1000, scale in 0.0f64..100.0) {
            let mut r = rng::stream(logit_seed, &[11]);
            let m = ModelVector::random(Arch::new(4, 3, 5), scale, &mut r).unwrap();
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
            let p = predict(&m, &x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
