//! End-to-end runs built from the individual stages.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{build_datasets, ReceiverDataset};
use crate::error::{PsanError, Result};
use crate::eval::{build_report, mean_accuracy, CurvePoint, EvalReport, RunModels};
use crate::mapping::{build_pairs, fit_mapping, MappingModel, TrainingPair};
use crate::metric::Metric;
use crate::model::ModelVector;
use crate::scenario::{make_scenario, Role, Scenario};
use crate::train::{train_fedavg, train_local, train_sources_observed, TrainOutput};
use crate::transfer::{aggregate, compute_weights, transfer_bandwidth, AggregationWeights};

#[derive(Debug, Clone)]
pub struct Generated {
    pub scenario: Scenario,
    pub datasets: Vec<ReceiverDataset>,
}

impl Generated {
    pub fn sources(&self) -> Vec<&ReceiverDataset> {
        self.datasets.iter().filter(|d| d.role() == Role::Source).collect()
    }

    pub fn targets(&self) -> Vec<&ReceiverDataset> {
        self.datasets.iter().filter(|d| d.role() == Role::Target).collect()
    }
}

pub fn generate(cfg: &RunConfig) -> Result<Generated> {
    cfg.validate()?;
    let scenario = make_scenario(&cfg.scenario, cfg.seed)?;
    let datasets = build_datasets(
        &scenario,
        cfg.scenario.samples_per_class,
        cfg.scenario.test_fraction,
        &cfg.feature_spec(),
    )?;
    Ok(Generated { scenario, datasets })
}

pub fn train_psan(
    cfg: &RunConfig,
    sources: &[&ReceiverDataset],
    observe: impl FnMut(usize, &[ModelVector]) -> Result<()>,
) -> Result<TrainOutput> {
    train_sources_observed(sources, cfg.arch(), &cfg.train_schedule(), &cfg.regularizer, &cfg.loss(), observe)
}

/// Local models of every source, in source order.
pub fn train_local_all(cfg: &RunConfig, sources: &[&ReceiverDataset]) -> Result<Vec<ModelVector>> {
    let schedule = cfg.train_schedule();
    sources
        .par_iter()
        .map(|d| train_local(d, cfg.arch(), &schedule, &cfg.loss()))
        .collect()
}

pub fn train_global(cfg: &RunConfig, sources: &[&ReceiverDataset]) -> Result<ModelVector> {
    train_fedavg(sources, cfg.arch(), &cfg.train_schedule(), &cfg.loss())
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub metric: Metric,
    pub pairs: Vec<TrainingPair>,
    pub mapping: MappingModel,
    pub bandwidth: f64,
    pub weights: Vec<AggregationWeights>,
    /// Models of the targets, in target order.
    pub models: Vec<ModelVector>,
}

fn embedding_of(scenario: &Scenario, id: usize) -> Result<&[f64]> {
    scenario
        .receivers
        .iter()
        .find(|r| r.profile.receiver_id == id)
        .map(|r| r.profile.embedding.as_slice())
        .ok_or_else(|| PsanError::Malformed {
            kind: "scenario",
            message: format!("no profile for receiver {id}"),
        })
}

/// Fit the semantic-to-model mapping on the sources and build every target
/// model. Only semantic profiles and source models are consulted.
pub fn fit_and_transfer(
    cfg: &RunConfig,
    scenario: &Scenario,
    source_ids: &[usize],
    source_models: &[ModelVector],
    metric: Metric,
) -> Result<Transfer> {
    let embeddings: Vec<Vec<f64>> = source_ids
        .iter()
        .map(|&id| embedding_of(scenario, id).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let pairs = build_pairs(source_ids, &embeddings, source_models, metric)?;
    let mapping = fit_mapping(&pairs, metric, &cfg.mapping_config())?;
    let bandwidth = transfer_bandwidth(&pairs, metric, cfg.transfer.bandwidth_scale)?;
    let sources: Vec<(usize, &[f64])> = source_ids.iter().copied().zip(embeddings.iter().map(Vec::as_slice)).collect();
    let mut weights = Vec::new();
    let mut models = Vec::new();
    for plan in scenario.targets() {
        let w = compute_weights(
            plan.profile.receiver_id,
            &plan.profile.embedding,
            &sources,
            &mapping,
            bandwidth,
            metric,
        )?;
        models.push(aggregate(&w, source_models)?);
        weights.push(w);
    }
    Ok(Transfer {
        metric,
        pairs,
        mapping,
        bandwidth,
        weights,
        models,
    })
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub generated: Generated,
    pub psan: TrainOutput,
    pub local: Vec<ModelVector>,
    pub global: ModelVector,
    pub transfer: Transfer,
    pub report: EvalReport,
}

/// Generate, train all three methods, transfer and evaluate.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let generated = generate(cfg)?;
    experiment_on(cfg, generated, |_, _| Ok(()))
}

/// [`run_experiment`] plus the metric comparison curves of the same
/// training run.
pub fn run_experiment_with_curves(cfg: &RunConfig) -> Result<(Experiment, MetricComparison)> {
    let generated = generate(cfg)?;
    let mut curve = Vec::new();
    let shared = generated.clone();
    let mut observe = curve_observer(cfg, &shared, [Metric::Cosine, Metric::Euclidean], &mut curve)?;
    let experiment = experiment_on(cfg, generated, &mut observe)?;
    drop(observe);
    Ok((experiment, MetricComparison { seed: cfg.seed, curve }))
}

fn experiment_on(
    cfg: &RunConfig,
    generated: Generated,
    observe: impl FnMut(usize, &[ModelVector]) -> Result<()>,
) -> Result<Experiment> {
    let sources = generated.sources();
    let ids: Vec<usize> = sources.iter().map(|d| d.receiver_id()).collect();
    let psan = train_psan(cfg, &sources, observe)?;
    let local = train_local_all(cfg, &sources)?;
    let global = train_global(cfg, &sources)?;
    let transfer = fit_and_transfer(cfg, &generated.scenario, &ids, &psan.models, cfg.transfer.metric)?;
    let report = build_report(
        &generated.datasets,
        &RunModels {
            psan_sources: &psan.models,
            psan_targets: &transfer.models,
            global: &global,
            local_sources: &local,
        },
        cfg.seed,
        cfg.transfer.metric,
    )?;
    Ok(Experiment {
        generated,
        psan,
        local,
        global,
        transfer,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
}

impl MetricComparison {
    pub fn final_point(&self) -> CurvePoint {
        *self.curve.last().expect("curve has the final round")
    }

    /// Final cosine minus final euclidean accuracy, in points.
    pub fn final_delta_points(&self) -> f64 {
        let p = self.final_point();
        100.0 * (p.cosine - p.euclidean)
    }
}

/// Mean target accuracy of the transferred models under each metric, at
/// round 0, every `eval_every` rounds and after the last round, from one
/// shared training run.
pub fn compare_metrics(cfg: &RunConfig, generated: &Generated) -> Result<MetricComparison> {
    compare_metric_arms(cfg, generated, [Metric::Cosine, Metric::Euclidean])
}

/// [`compare_metrics`] with arbitrary arms; the curve's `cosine` and
/// `euclidean` columns hold the first and second arm.
pub fn compare_metric_arms(cfg: &RunConfig, generated: &Generated, arms: [Metric; 2]) -> Result<MetricComparison> {
    let mut curve = Vec::new();
    let observe = curve_observer(cfg, generated, arms, &mut curve)?;
    train_psan(cfg, &generated.sources(), observe)?;
    Ok(MetricComparison { seed: cfg.seed, curve })
}

fn curve_observer<'a>(
    cfg: &'a RunConfig,
    generated: &'a Generated,
    arms: [Metric; 2],
    curve: &'a mut Vec<CurvePoint>,
) -> Result<impl FnMut(usize, &[ModelVector]) -> Result<()> + 'a> {
    let targets = generated.targets();
    if targets.is_empty() {
        return Err(PsanError::config("scenario.targets", "the metric comparison needs at least one target"));
    }
    let ids: Vec<usize> = generated.sources().iter().map(|d| d.receiver_id()).collect();
    let rounds = cfg.schedule.rounds;
    let score = move |models: &[ModelVector], metric: Metric| -> Result<f64> {
        let t = fit_and_transfer(cfg, &generated.scenario, &ids, models, metric)?;
        let mut total = 0.0;
        for (m, d) in t.models.iter().zip(&targets) {
            total += mean_accuracy(std::slice::from_ref(m), d)?;
        }
        Ok(total / targets.len() as f64)
    };
    Ok(move |t: usize, models: &[ModelVector]| {
        if t.is_multiple_of(cfg.eval.eval_every) || t == rounds {
            curve.push(CurvePoint {
                round: t,
                cosine: score(models, arms[0])?,
                euclidean: score(models, arms[1])?,
            });
        }
        Ok(())
    })
}
