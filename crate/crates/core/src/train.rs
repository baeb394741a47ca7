//! Personalized federated training of the source receivers.
//!
//! Every coordination round broadcasts each receiver's current model, runs
//! `E` local SGD epochs on every source in parallel, and applies one server
//! gradient step on the pairwise regularizer
//! `gamma * sum_{k != j} R(|w_k - w_j|^2)` with `R(x) = 1 - exp(-x / sigma)`.
//! The server step is evaluated both as a gradient step and as the equivalent
//! row-stochastic combination `psi_k = sum_j xi_kj w_j`; the two must agree.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, ReceiverDataset};
use crate::error::{PsanError, Result};
use crate::metric;
use crate::model::{loss_and_grad, loss_and_grad_refs, Arch, LossSpec, ModelVector};
use crate::rng::{self, tag, Stream};

/// Tolerance for the gradient-form / combination-form agreement.
pub const SERVER_STEP_TOLERANCE: f64 = 1e-10;

/// `R(x) = 1 - exp(-x / sigma)`.
pub fn attention_r(x: f64, sigma: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(PsanError::NegativeArgument(x));
    }
    Ok(-(-x / sigma).exp_m1())
}

/// `R'(x) = exp(-x / sigma) / sigma`.
pub fn attention_r_prime(x: f64, sigma: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(PsanError::NegativeArgument(x));
    }
    Ok((-x / sigma).exp() / sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SigmaMode {
    /// `scale` times the median pairwise squared distance between the
    /// models after the first round of local training.
    Median { scale: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AlphaMode {
    /// `0.9 / (2 lambda max_k sum_j R'_kj)`, recomputed every round.
    Auto,
    /// Step that makes one round approximate a gradient step on the full
    /// objective: `2 * (local steps per round) * lr * gamma / lambda`, capped
    /// at the automatic step.
    Matched,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSpec {
    pub gamma: f64,
    pub sigma: SigmaMode,
    /// Server-step weight; `None` means `gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub alpha: AlphaMode,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            gamma: 1.0,
            sigma: SigmaMode::Median { scale: 1.0 },
            lambda: None,
            alpha: AlphaMode::Auto,
        }
    }
}

impl RegularizerSpec {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(PsanError::config("regularizer.gamma", "must be finite and >= 0"));
        }
        if !(self.lambda().is_finite() && self.lambda() >= 0.0) {
            return Err(PsanError::config("regularizer.lambda", "must be finite and >= 0"));
        }
        match self.sigma {
            SigmaMode::Median { scale } if !positive(scale) => {
                return Err(PsanError::config("regularizer.sigma.scale", "must be > 0"))
            }
            SigmaMode::Fixed { value } if !positive(value) => {
                return Err(PsanError::config("regularizer.sigma.value", "must be > 0"))
            }
            _ => {}
        }
        if let AlphaMode::Fixed { value } = self.alpha {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PsanError::config("regularizer.alpha.value", "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Set from the run's master seed.
    #[serde(skip)]
    pub seed: u64,
    /// Standard deviation of the shared initial parameters.
    pub init_std: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            rounds: 250,
            local_epochs: 5,
            batch_size: 6,
            learning_rate: 0.005,
            seed: 0,
            init_std: 0.01,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(PsanError::config("schedule.local_epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(PsanError::config("schedule.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(PsanError::config("schedule.learning_rate", "must be finite and >= 0"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(PsanError::config("schedule.init_std", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// SGD steps one receiver takes per round.
    pub fn steps_per_round(&self, train_len: usize) -> usize {
        self.local_epochs * train_len.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Objective after the server step.
    pub objective: f64,
    /// Local losses `F_k` after the server step.
    pub local_losses: Vec<f64>,
    pub alpha: f64,
    pub sigma: f64,
    pub xi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Vec<ModelVector>,
    pub logs: Vec<RoundLog>,
    /// Seconds spent per round; kept apart from the logs so those stay
    /// reproducible byte for byte.
    pub wall_times: Vec<f64>,
    pub sigma: f64,
}

/// The shared broadcast initialization.
pub fn initial_model(arch: Arch, schedule: &TrainSchedule) -> Result<ModelVector> {
    ModelVector::random(arch, schedule.init_std, &mut rng::stream(schedule.seed, &[tag::INIT]))
}

/// Random stream for receiver `receiver` in round `round`.
pub fn local_stream(schedule: &TrainSchedule, receiver: usize, round: usize) -> Stream {
    rng::stream(schedule.seed, &[tag::LOCAL, receiver as u64, round as u64])
}

/// `E` epochs of mini-batch SGD; every epoch visits a fresh shuffle of the
/// train split in batches of `B` (the last batch may be smaller).
pub fn local_update(
    model: &ModelVector,
    dataset: &ReceiverDataset,
    schedule: &TrainSchedule,
    spec: &LossSpec,
    rng: &mut Stream,
) -> Result<ModelVector> {
    let samples = dataset.train_samples();
    if samples.is_empty() {
        return Err(PsanError::EmptyTrainSplit(dataset.receiver_id()));
    }
    sgd_epochs(model, samples, schedule, spec, rng)
}

fn sgd_epochs(
    model: &ModelVector,
    samples: &[LabeledSample],
    schedule: &TrainSchedule,
    spec: &LossSpec,
    rng: &mut Stream,
) -> Result<ModelVector> {
    let mut w = model.clone();
    let mut batch: Vec<&LabeledSample> = Vec::with_capacity(schedule.batch_size);
    for _ in 0..schedule.local_epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(schedule.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &samples[i]));
            let (_, g) = loss_and_grad_refs(&w, &batch, spec)?;
            for (p, gi) in w.params.iter_mut().zip(&g) {
                *p -= schedule.learning_rate * gi;
            }
        }
    }
    if w.params.iter().any(|v| !v.is_finite()) {
        return Err(PsanError::NonFinite("model parameters after local update"));
    }
    Ok(w)
}

/// Pairwise squared distances in receiver order.
pub fn pairwise_squared_distances(models: &[ModelVector]) -> Vec<Vec<f64>> {
    let k = models.len();
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = metric::squared_distance(&models[i].params, &models[j].params);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Median of the off-diagonal pairwise squared distances.
pub fn median_pairwise(models: &[ModelVector]) -> f64 {
    let d = pairwise_squared_distances(models);
    let mut values: Vec<f64> = (0..d.len())
        .flat_map(|i| (i + 1..d.len()).map(move |j| (i, j)))
        .map(|(i, j)| d[i][j])
        .collect();
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Step size and bandwidth in force for one server step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerParams {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma: f64,
}

/// Largest step keeping every diagonal coefficient nonnegative.
pub fn max_alpha(r_prime_rows: &[f64], lambda: f64) -> f64 {
    let worst = r_prime_rows.iter().cloned().fold(0.0, f64::max);
    if worst == 0.0 || lambda == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (2.0 * lambda * worst)
    }
}

fn r_prime_matrix(d: &[Vec<f64>], sigma: f64) -> Result<Vec<Vec<f64>>> {
    let k = d.len();
    let mut r = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                r[i][j] = attention_r_prime(d[i][j], sigma)?;
            }
        }
    }
    Ok(r)
}

/// Off-diagonal row sums of `R'` for the given models.
pub fn r_prime_row_sums(models: &[ModelVector], sigma: f64) -> Result<Vec<f64>> {
    let r = r_prime_matrix(&pairwise_squared_distances(models), sigma)?;
    Ok(r.iter().map(|row| row.iter().sum()).collect())
}

/// One server regularizer step. Returns the new models and the coefficient
/// matrix `xi` (off-diagonal `2 alpha lambda R'`, diagonal one minus the
/// rest of the row).
pub fn server_step(models: &[ModelVector], params: ServerParams) -> Result<(Vec<ModelVector>, Vec<Vec<f64>>)> {
    let k = models.len();
    if k == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let arch = models[0].arch;
    if let Some(m) = models.iter().find(|m| m.arch != arch) {
        return Err(PsanError::ArchMismatch(format!("{} vs {}", arch, m.arch)));
    }
    let d = pairwise_squared_distances(models);
    let r = r_prime_matrix(&d, params.sigma)?;
    let coupling = 2.0 * params.alpha * params.lambda;
    let mut xi = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut off = 0.0;
        for j in 0..k {
            if i != j {
                xi[i][j] = coupling * r[i][j];
                off += xi[i][j];
            }
        }
        if off > 1.0 + 1e-12 {
            let sums: Vec<f64> = r.iter().map(|row| row.iter().sum()).collect();
            return Err(PsanError::StepSizeViolation {
                row: i,
                value: off,
                max_alpha: max_alpha(&sums, params.lambda),
            });
        }
        xi[i][i] = 1.0 - off;
    }

    let dim = arch.param_count();
    let mut combined = Vec::with_capacity(k);
    let mut worst = 0.0f64;
    for i in 0..k {
        // convex-combination form
        let mut psi: Vec<f64> = models[i].params.iter().map(|w| xi[i][i] * w).collect();
        for j in 0..k {
            if j != i && xi[i][j] != 0.0 {
                for (p, w) in psi.iter_mut().zip(&models[j].params) {
                    *p += xi[i][j] * w;
                }
            }
        }
        // gradient form: w_i - alpha * lambda * sum_j 2 R'_ij (w_i - w_j)
        let mut grad = vec![0.0; dim];
        for j in 0..k {
            if j != i && r[i][j] != 0.0 {
                for ((g, a), b) in grad.iter_mut().zip(&models[i].params).zip(&models[j].params) {
                    *g += 2.0 * r[i][j] * (a - b);
                }
            }
        }
        for ((p, w), g) in psi.iter().zip(&models[i].params).zip(&grad) {
            let direct = w - params.alpha * params.lambda * g;
            worst = worst.max((p - direct).abs() / w.abs().max(1.0));
        }
        combined.push(ModelVector { arch, params: psi });
    }
    if worst > SERVER_STEP_TOLERANCE {
        return Err(PsanError::ServerStepMismatch(worst));
    }
    Ok((combined, xi))
}

/// Mean full-train-split loss of every source.
pub fn local_losses(models: &[ModelVector], datasets: &[&ReceiverDataset], spec: &LossSpec) -> Result<Vec<f64>> {
    models
        .iter()
        .zip(datasets)
        .map(|(m, d)| Ok(loss_and_grad(m, d.train_samples(), spec)?.0))
        .collect()
}

/// `J = sum_k F_k(w_k) + gamma * sum_{k != j} R(|w_k - w_j|^2)` over ordered
/// pairs.
pub fn objective(local: &[f64], models: &[ModelVector], gamma: f64, sigma: f64) -> Result<f64> {
    let d = pairwise_squared_distances(models);
    let mut reg = 0.0;
    for (i, row) in d.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                reg += attention_r(v, sigma)?;
            }
        }
    }
    Ok(local.iter().sum::<f64>() + gamma * reg)
}

fn resolve_sigma(mode: SigmaMode, models: &[ModelVector]) -> f64 {
    match mode {
        SigmaMode::Fixed { value } => value,
        SigmaMode::Median { scale } => {
            let m = median_pairwise(models);
            if m > 0.0 {
                scale * m
            } else {
                scale
            }
        }
    }
}

fn resolve_alpha(
    reg: &RegularizerSpec,
    schedule: &TrainSchedule,
    train_len: usize,
    models: &[ModelVector],
    sigma: f64,
) -> Result<f64> {
    let lambda = reg.lambda();
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let auto = || -> Result<f64> { Ok(0.9 * max_alpha(&r_prime_row_sums(models, sigma)?, lambda)) };
    Ok(match reg.alpha {
        AlphaMode::Fixed { value } => value,
        AlphaMode::Auto => auto()?,
        AlphaMode::Matched => {
            let matched =
                2.0 * schedule.steps_per_round(train_len) as f64 * schedule.learning_rate * reg.gamma / lambda;
            matched.min(auto()?)
        }
    })
}

/// Algorithm driver for the source receivers. `datasets` must all be
/// sources; models are returned in the same order.
pub fn train_sources(
    datasets: &[&ReceiverDataset],
    arch: Arch,
    schedule: &TrainSchedule,
    reg: &RegularizerSpec,
    spec: &LossSpec,
) -> Result<TrainOutput> {
    train_sources_observed(datasets, arch, schedule, reg, spec, |_, _| Ok(()))
}

/// [`train_sources`] calling `observe(t, models)` with the models in force
/// before round `t` (the broadcast initialization for `t = 0`) and once more
/// with `t = rounds` after the last round.
pub fn train_sources_observed(
    datasets: &[&ReceiverDataset],
    arch: Arch,
    schedule: &TrainSchedule,
    reg: &RegularizerSpec,
    spec: &LossSpec,
    mut observe: impl FnMut(usize, &[ModelVector]) -> Result<()>,
) -> Result<TrainOutput> {
    schedule.validate()?;
    reg.validate()?;
    spec.validate()?;
    if datasets.len() < 2 {
        return Err(PsanError::TooFewSources {
            needed: 2,
            actual: datasets.len(),
        });
    }
    for d in datasets {
        if d.train_len() == 0 {
            return Err(PsanError::EmptyTrainSplit(d.receiver_id()));
        }
    }
    let init = initial_model(arch, schedule)?;
    let mut models = vec![init; datasets.len()];
    let mut logs = Vec::with_capacity(schedule.rounds);
    let mut wall_times = Vec::with_capacity(schedule.rounds);
    let mut sigma = match reg.sigma {
        SigmaMode::Fixed { value } => value,
        SigmaMode::Median { .. } => f64::NAN,
    };
    let lambda = reg.lambda();
    for round in 0..schedule.rounds {
        observe(round, &models)?;
        let start = Instant::now();
        let uploads: Vec<ModelVector> = models
            .par_iter()
            .zip(datasets.par_iter())
            .map(|(m, d)| local_update(m, d, schedule, spec, &mut local_stream(schedule, d.receiver_id(), round)))
            .collect::<Result<_>>()?;
        if sigma.is_nan() {
            sigma = resolve_sigma(reg.sigma, &uploads);
        }
        let alpha = resolve_alpha(reg, schedule, datasets[0].train_len(), &uploads, sigma)?;
        let (next, xi) = server_step(&uploads, ServerParams { alpha, lambda, sigma })?;
        models = next;
        let local = local_losses(&models, datasets, spec)?;
        let objective = objective(&local, &models, reg.gamma, sigma)?;
        logs.push(RoundLog {
            round,
            objective,
            local_losses: local,
            alpha,
            sigma,
            xi,
        });
        wall_times.push(start.elapsed().as_secs_f64());
    }
    observe(schedule.rounds, &models)?;
    if sigma.is_nan() {
        sigma = resolve_sigma(reg.sigma, &models);
    }
    Ok(TrainOutput {
        models,
        logs,
        wall_times,
        sigma,
    })
}

/// Independent training of one receiver: the same rounds and random streams
/// as [`train_sources`], without any server step.
pub fn train_local(
    dataset: &ReceiverDataset,
    arch: Arch,
    schedule: &TrainSchedule,
    spec: &LossSpec,
) -> Result<ModelVector> {
    schedule.validate()?;
    if dataset.train_len() == 0 {
        return Err(PsanError::EmptyTrainSplit(dataset.receiver_id()));
    }
    let mut m = initial_model(arch, schedule)?;
    for round in 0..schedule.rounds {
        m = local_update(&m, dataset, schedule, spec, &mut local_stream(schedule, dataset.receiver_id(), round))?;
    }
    Ok(m)
}

/// FedAvg: every round all sources start from the global model, train
/// locally, and the server replaces the global model by the train-size
/// weighted mean of the uploads.
pub fn train_fedavg(
    datasets: &[&ReceiverDataset],
    arch: Arch,
    schedule: &TrainSchedule,
    spec: &LossSpec,
) -> Result<ModelVector> {
    schedule.validate()?;
    if datasets.is_empty() {
        return Err(PsanError::TooFewSources { needed: 1, actual: 0 });
    }
    for d in datasets {
        if d.train_len() == 0 {
            return Err(PsanError::EmptyTrainSplit(d.receiver_id()));
        }
    }
    let total: usize = datasets.iter().map(|d| d.train_len()).sum();
    let mut global = initial_model(arch, schedule)?;
    for round in 0..schedule.rounds {
        let uploads: Vec<ModelVector> = datasets
            .par_iter()
            .map(|d| local_update(&global, d, schedule, spec, &mut local_stream(schedule, d.receiver_id(), round)))
            .collect::<Result<_>>()?;
        global = weighted_average(&uploads, &datasets.iter().map(|d| d.train_len() as f64 / total as f64).collect::<Vec<_>>());
    }
    Ok(global)
}

/// `sum_k weights[k] * models[k]`; a single model is returned unchanged.
pub fn weighted_average(models: &[ModelVector], weights: &[f64]) -> ModelVector {
    if models.len() == 1 {
        return models[0].clone();
    }
    let arch = models[0].arch;
    let mut params = vec![0.0; arch.param_count()];
    for (m, &w) in models.iter().zip(weights) {
        for (p, v) in params.iter_mut().zip(&m.params) {
            *p += w * v;
        }
    }
    ModelVector { arch, params }
}

/// Full-batch gradient descent on `J` itself, used as an oracle for small
/// problems. Stops once the gradient norm drops below `tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_objective_directly(
    datasets: &[&ReceiverDataset],
    start: &[ModelVector],
    gamma: f64,
    sigma: f64,
    spec: &LossSpec,
    step: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<ModelVector>, f64)> {
    let mut models = start.to_vec();
    for it in 0..max_iterations {
        let d = pairwise_squared_distances(&models);
        let r = r_prime_matrix(&d, sigma)?;
        let mut grads = Vec::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            let (_, mut g) = loss_and_grad(m, datasets[i].train_samples(), spec)?;
            for (j, other) in models.iter().enumerate() {
                if j != i {
                    // each unordered pair appears twice in J
                    for ((gi, a), b) in g.iter_mut().zip(&m.params).zip(&other.params) {
                        *gi += 4.0 * gamma * r[i][j] * (a - b);
                    }
                }
            }
            grads.push(g);
        }
        let norm = grads.iter().map(|g| metric::dot(g, g)).sum::<f64>().sqrt();
        if norm < tolerance {
            let local = local_losses(&models, datasets, spec)?;
            return Ok((models.clone(), objective(&local, &models, gamma, sigma)?));
        }
        if it + 1 == max_iterations {
            return Err(PsanError::OracleNotConverged {
                grad_norm: norm,
                iterations: max_iterations,
            });
        }
        for (m, g) in models.iter_mut().zip(&grads) {
            for (p, gi) in m.params.iter_mut().zip(g) {
                *p -= step * gi;
            }
        }
    }
    Err(PsanError::OracleNotConverged {
        grad_norm: f64::NAN,
        iterations: max_iterations,
    })
}
