//! Accuracy, optimality gaps and comparison reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, ReceiverDataset};
use crate::error::{PsanError, Result};
use crate::metric::{self, Metric};
use crate::model::{accuracy, loss_and_grad, smoothness_bound, LossSpec, ModelVector};
use crate::scenario::Role;

pub const REPORT_VERSION: u32 = 1;

/// Accuracy of `model` on the test split of `dataset`.
pub fn evaluate(model: &ModelVector, dataset: &ReceiverDataset) -> Result<f64> {
    let samples = dataset.eval_samples();
    if samples.is_empty() {
        return Err(PsanError::EmptyTestSplit(dataset.receiver_id()));
    }
    accuracy(model, samples)
}

/// Mean accuracy of several models on one test split.
pub fn mean_accuracy(models: &[ModelVector], dataset: &ReceiverDataset) -> Result<f64> {
    let mut total = 0.0;
    for m in models {
        total += evaluate(m, dataset)?;
    }
    Ok(total / models.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub receiver_id: usize,
    pub evaluated: f64,
    pub oracle: f64,
    pub gap: f64,
}

/// Minimizer of the regularized loss over `samples` by accelerated
/// full-batch gradient descent (step `1 / L`, momentum from the `l2`
/// strong convexity, reset whenever it points uphill), stopped at
/// gradient norm `tolerance`. Returns the minimizer and its loss.
pub fn loss_minimizer(
    start: &ModelVector,
    samples: &[LabeledSample],
    spec: &LossSpec,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(ModelVector, f64)> {
    if start.arch.hidden != 0 {
        return Err(PsanError::ArchMismatch(
            "the loss minimizer oracle needs the convex (hidden = 0) architecture".into(),
        ));
    }
    let smooth = smoothness_bound(samples, spec)?;
    let step = 1.0 / smooth;
    let q = (spec.l2 / smooth).sqrt();
    let momentum = (1.0 - q) / (1.0 + q);
    let mut x = start.clone();
    let mut y = start.clone();
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iterations {
        let (fy, g) = loss_and_grad(&y, samples, spec)?;
        grad_norm = metric::dot(&g, &g).sqrt();
        if grad_norm < tolerance {
            return Ok((y, fy));
        }
        let mut next = y.clone();
        for (p, gi) in next.params.iter_mut().zip(&g) {
            *p -= step * gi;
        }
        // drop the momentum when it points uphill
        let uphill: f64 = g.iter().zip(&next.params).zip(&x.params).map(|((gi, n), o)| gi * (n - o)).sum();
        let beta = if uphill > 0.0 { 0.0 } else { momentum };
        for ((yp, np), xp) in y.params.iter_mut().zip(&next.params).zip(&x.params) {
            *yp = np + beta * (np - xp);
        }
        x = next;
    }
    Err(PsanError::OracleNotConverged {
        grad_norm,
        iterations: max_iterations,
    })
}

/// Excess loss of `model` on the receiver's labelled test split over the
/// split's own loss minimizer.
pub fn optimality_gap(model: &ModelVector, dataset: &ReceiverDataset, spec: &LossSpec) -> Result<GapEstimate> {
    Ok(optimality_gaps(&[model], dataset, spec)?.remove(0))
}

/// [`optimality_gap`] for several models, sharing one oracle run.
pub fn optimality_gaps(models: &[&ModelVector], dataset: &ReceiverDataset, spec: &LossSpec) -> Result<Vec<GapEstimate>> {
    let samples = dataset.eval_samples();
    if samples.is_empty() {
        return Err(PsanError::EmptyTestSplit(dataset.receiver_id()));
    }
    let first = models.first().ok_or(PsanError::EmptyBatch)?;
    let (_, oracle) = loss_minimizer(first, samples, spec, 1e-8, 1_000_000)?;
    models
        .iter()
        .map(|m| {
            let evaluated = loss_and_grad(m, samples, spec)?.0;
            Ok(GapEstimate {
                receiver_id: dataset.receiver_id(),
                evaluated,
                oracle,
                gap: evaluated - oracle,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Own local model for sources; mean of all source-local models for
    /// targets.
    Local,
    /// The single FedAvg model.
    Global,
    Psan,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Local, Method::Global, Method::Psan];

    pub fn name(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::Global => "global",
            Method::Psan => "psan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverRow {
    pub receiver_id: usize,
    pub role: Role,
    pub local: f64,
    pub global: f64,
    pub psan: f64,
}

impl ReceiverRow {
    pub fn get(&self, method: Method) -> f64 {
        match method {
            Method::Local => self.local,
            Method::Global => self.global,
            Method::Psan => self.psan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodMeans {
    pub local: f64,
    pub global: f64,
    pub psan: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    /// Difference in accuracy points (percent).
    pub points: f64,
    /// Difference relative to the baseline, in percent.
    pub relative_percent: f64,
}

impl Improvement {
    pub fn between(new: f64, baseline: f64) -> Self {
        Improvement {
            points: 100.0 * (new - baseline),
            relative_percent: if baseline > 0.0 {
                100.0 * (new - baseline) / baseline
            } else {
                f64::NAN
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub metric: Metric,
    pub rows: Vec<ReceiverRow>,
    pub source_means: MethodMeans,
    pub target_means: Option<MethodMeans>,
    pub target_psan_vs_global: Option<Improvement>,
    pub target_psan_vs_local: Option<Improvement>,
}

fn means<'a>(rows: impl Iterator<Item = &'a ReceiverRow> + Clone) -> Option<MethodMeans> {
    let n = rows.clone().count();
    if n == 0 {
        return None;
    }
    let avg = |m: Method| rows.clone().map(|r| r.get(m)).sum::<f64>() / n as f64;
    Some(MethodMeans {
        local: avg(Method::Local),
        global: avg(Method::Global),
        psan: avg(Method::Psan),
    })
}

/// Models of one run, indexed by receiver position in `datasets`.
pub struct RunModels<'a> {
    /// Personalized models of the sources, in source order.
    pub psan_sources: &'a [ModelVector],
    /// Transferred models of the targets, in target order.
    pub psan_targets: &'a [ModelVector],
    pub global: &'a ModelVector,
    /// Local models of the sources, in source order.
    pub local_sources: &'a [ModelVector],
}

pub fn build_report(datasets: &[ReceiverDataset], models: &RunModels<'_>, seed: u64, metric: Metric) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(datasets.len());
    let (mut si, mut ti) = (0, 0);
    for d in datasets {
        let row = match d.role() {
            Role::Source => {
                let r = ReceiverRow {
                    receiver_id: d.receiver_id(),
                    role: Role::Source,
                    local: evaluate(&models.local_sources[si], d)?,
                    global: evaluate(models.global, d)?,
                    psan: evaluate(&models.psan_sources[si], d)?,
                };
                si += 1;
                r
            }
            Role::Target => {
                let r = ReceiverRow {
                    receiver_id: d.receiver_id(),
                    role: Role::Target,
                    local: mean_accuracy(models.local_sources, d)?,
                    global: evaluate(models.global, d)?,
                    psan: evaluate(&models.psan_targets[ti], d)?,
                };
                ti += 1;
                r
            }
        };
        rows.push(row);
    }
    let source_means = means(rows.iter().filter(|r| r.role == Role::Source)).ok_or(PsanError::TooFewSources {
        needed: 1,
        actual: 0,
    })?;
    let target_means = means(rows.iter().filter(|r| r.role == Role::Target));
    Ok(EvalReport {
        version: REPORT_VERSION,
        seed,
        metric,
        rows,
        source_means,
        target_psan_vs_global: target_means.map(|m| Improvement::between(m.psan, m.global)),
        target_psan_vs_local: target_means.map(|m| Improvement::between(m.psan, m.local)),
        target_means,
    })
}

/// Flat CSV: one row per receiver x method x seed.
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "seed,receiver_id,role,method,accuracy")?;
    for r in reports {
        for row in &r.rows {
            let role = match row.role {
                Role::Source => "source",
                Role::Target => "target",
            };
            for m in Method::ALL {
                writeln!(w, "{},{},{},{},{}", r.seed, row.receiver_id, role, m.name(), row.get(m))?;
            }
        }
    }
    Ok(())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub target_psan: f64,
    pub target_global: f64,
    pub target_local: f64,
    pub source_psan: f64,
    pub source_global: f64,
    pub source_local: f64,
}

/// Medians over seeds of the per-seed macro averages.
pub fn summarize(reports: &[EvalReport]) -> SeedSummary {
    let pick = |f: &dyn Fn(&EvalReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    let target = |f: fn(&MethodMeans) -> f64| move |r: &EvalReport| r.target_means.as_ref().map(f).unwrap_or(f64::NAN);
    SeedSummary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        target_psan: pick(&target(|m| m.psan)),
        target_global: pick(&target(|m| m.global)),
        target_local: pick(&target(|m| m.local)),
        source_psan: pick(&|r| r.source_means.psan),
        source_global: pick(&|r| r.source_means.global),
        source_local: pick(&|r| r.source_means.local),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub cosine: f64,
    pub euclidean: f64,
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "round,cosine,euclidean")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.round, p.cosine, p.euclidean)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    /// Upward moves of the objective after round 3.
    pub blips: usize,
    /// Largest relative size of those moves.
    pub largest_blip: f64,
    /// Least-squares slope of `ln(J_t - J*)` against `ln t`.
    pub log_log_slope: f64,
}

/// Diagnostics of an objective trace `objective[t]` (round `t`, 0-based)
/// against a reference optimum.
pub fn convergence_diagnostics(objective: &[f64], optimum: f64) -> ConvergenceDiagnostics {
    let (mut blips, mut largest_blip) = (0, 0.0f64);
    for t in 4..objective.len() {
        if objective[t] > objective[t - 1] {
            blips += 1;
            largest_blip = largest_blip.max((objective[t] - objective[t - 1]) / objective[t - 1].abs());
        }
    }
    let points: Vec<(f64, f64)> = objective
        .iter()
        .enumerate()
        .filter(|(_, &j)| j - optimum > 0.0)
        .map(|(t, &j)| (((t + 1) as f64).ln(), (j - optimum).ln()))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    ConvergenceDiagnostics {
        blips,
        largest_blip,
        log_log_slope: if sxx > 0.0 { sxy / sxx } else { f64::NAN },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::rng;
    use rand::Rng;

    fn dataset(samples: Vec<LabeledSample>, classes: usize) -> ReceiverDataset {
        ReceiverDataset::new(0, Role::Target, classes, vec![], samples).unwrap()
    }

    fn sample(x: Vec<f64>, y: usize) -> LabeledSample {
        LabeledSample {
            receiver_id: 0,
            features: x,
            label: y,
        }
    }

    #[test]
    fn uniform_model_is_at_chance() {
        // zero model predicts class 0 for everything; on a balanced set that
        // is exactly 1/6, inside any binomial band around chance
        let mut r = rng::stream(1, &[1]);
        let samples: Vec<_> = (0..600).map(|i| sample(vec![r.random_range(-1.0..1.0)], i % 6)).collect();
        let acc = evaluate(&ModelVector::zeros(Arch::new(1, 0, 6)), &dataset(samples, 6)).unwrap();
        let sd = (1.0f64 / 6.0 * 5.0 / 6.0 / 600.0).sqrt();
        assert!((acc - 1.0 / 6.0).abs() <= 3.0 * sd);
    }

    #[test]
    fn separable_set_with_oracle_model() {
        // class 1 iff x0 > 0; the separator w = [[-1, 0], [1, 0]]
        let mut r = rng::stream(2, &[2]);
        let samples: Vec<_> = (0..100)
            .map(|_| {
                let x0: f64 = r.random_range(0.1..2.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
                sample(vec![x0, r.random_range(-5.0..5.0)], usize::from(x0 > 0.0))
            })
            .collect();
        let oracle = ModelVector::new(Arch::new(2, 0, 2), vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let d = dataset(samples.clone(), 2);
        assert_eq!(evaluate(&oracle, &d).unwrap(), 1.0);
        let doubled: Vec<_> = samples.iter().chain(&samples).cloned().collect();
        let mut r = rng::stream(3, &[3]);
        let m = ModelVector::random(Arch::new(2, 0, 2), 1.0, &mut r).unwrap();
        assert_eq!(evaluate(&m, &d).unwrap(), evaluate(&m, &dataset(doubled, 2)).unwrap());
    }

    #[test]
    fn empty_test_split_is_an_error() {
        let d = ReceiverDataset::new(4, Role::Target, 2, vec![], vec![]).unwrap();
        assert!(matches!(evaluate(&ModelVector::zeros(Arch::new(1, 0, 2)), &d), Err(PsanError::EmptyTestSplit(4))));
    }

    #[test]
    fn gap_of_minimizer_is_zero_and_descent_shrinks_it() {
        let mut r = rng::stream(4, &[4]);
        let samples: Vec<_> = (0..30).map(|i| sample(vec![r.random_range(-1.0..1.0) + (i % 3) as f64, r.random_range(-1.0..1.0)], i % 3)).collect();
        let d = dataset(samples.clone(), 3);
        let spec = LossSpec { l2: 0.01 };
        let start = ModelVector::zeros(Arch::new(2, 0, 3));
        let (opt, _) = loss_minimizer(&start, &samples, &spec, 1e-10, 1_000_000).unwrap();
        let g = optimality_gap(&opt, &d, &spec).unwrap();
        assert!(g.gap.abs() < 1e-8);
        assert!(g.oracle <= g.evaluated + 1e-6);
        // along the oracle's own trajectory the gap decreases monotonically
        let step = 1.0 / smoothness_bound(&samples, &spec).unwrap();
        let mut w = start;
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let gap = optimality_gap(&w, &d, &spec).unwrap().gap;
            assert!(gap <= prev + 1e-12);
            assert!(gap >= -1e-10);
            prev = gap;
            let (_, grad) = loss_and_grad(&w, &samples, &spec).unwrap();
            for (p, gi) in w.params.iter_mut().zip(&grad) {
                *p -= step * gi;
            }
        }
    }

    #[test]
    fn improvement_reports_points_and_relative() {
        let i = Improvement::between(0.6, 0.4);
        assert!((i.points - 20.0).abs() < 1e-12);
        assert!((i.relative_percent - 50.0).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn diagnostics_of_a_power_law() {
        let trace: Vec<f64> = (0..200).map(|t| 1.0 + 5.0 / ((t + 1) as f64).powi(2)).collect();
        let d = convergence_diagnostics(&trace, 1.0);
        assert_eq!(d.blips, 0);
        assert!((d.log_log_slope + 2.0).abs() < 1e-9);
        let mut bumpy = trace.clone();
        bumpy[10] = bumpy[9] * 1.001;
        assert_eq!(convergence_diagnostics(&bumpy, 1.0).blips, 1);
    }

    #[test]
    fn report_has_every_cell() {
        let mk = |id: usize, role: Role| {
            let samples: Vec<_> = (0..4)
                .map(|i| LabeledSample {
                    receiver_id: id,
                    features: vec![i as f64 - 1.5],
                    label: usize::from(i >= 2),
                })
                .collect();
            match role {
                Role::Source => ReceiverDataset::new(id, role, 2, samples.clone(), samples).unwrap(),
                Role::Target => ReceiverDataset::new(id, role, 2, vec![], samples).unwrap(),
            }
        };
        let datasets = vec![mk(0, Role::Source), mk(1, Role::Source), mk(2, Role::Target)];
        let good = ModelVector::new(Arch::new(1, 0, 2), vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        let bad = ModelVector::new(Arch::new(1, 0, 2), vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let models = RunModels {
            psan_sources: &[good.clone(), good.clone()],
            psan_targets: std::slice::from_ref(&good),
            global: &bad,
            local_sources: &[good.clone(), bad.clone()],
        };
        let rep = build_report(&datasets, &models, 5, Metric::Cosine).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(rep.rows[2].local, 0.5);
        assert_eq!(rep.rows[2].psan, 1.0);
        assert_eq!(rep.target_psan_vs_global.unwrap().points, 100.0);
        let mut out = Vec::new();
        write_reports_csv(&[rep], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 9);
        assert!(datasets.iter().all(|d| d.training_label_reads() == 0));
    }
}
