//! Per-receiver labelled feature datasets.
//!
//! Labels sit behind accessors that count reads. Training code obtains labels
//! only through [`ReceiverDataset::train_samples`]; evaluation uses
//! [`ReceiverDataset::eval_samples`], which is counted separately. A target
//! receiver has an empty train split, so its training read count stays 0
//! unless something reaches around the guard.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::synthesize;
use crate::error::{PsanError, Result};
use crate::features::{extract_features, FeatureSpec};
use crate::rng::{self, tag};
use crate::scenario::{perform_gesture, Role, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub receiver_id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Default)]
struct AccessCounters {
    training: AtomicUsize,
    evaluation: AtomicUsize,
}

#[derive(Debug, Clone)]
pub struct ReceiverDataset {
    receiver_id: usize,
    role: Role,
    classes: usize,
    train: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
    counters: Arc<AccessCounters>,
}

impl ReceiverDataset {
    pub fn new(
        receiver_id: usize,
        role: Role,
        classes: usize,
        train: Vec<LabeledSample>,
        test: Vec<LabeledSample>,
    ) -> Result<Self> {
        let dim = train.first().or(test.first()).map(|s| s.features.len());
        for s in train.iter().chain(&test) {
            if s.receiver_id != receiver_id {
                return Err(PsanError::Malformed {
                    kind: "dataset",
                    message: format!("sample of receiver {} filed under {receiver_id}", s.receiver_id),
                });
            }
            if s.label >= classes {
                return Err(PsanError::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
            if Some(s.features.len()) != dim {
                return Err(PsanError::DimensionMismatch {
                    expected: dim.unwrap_or(0),
                    actual: s.features.len(),
                    context: "dataset feature dimension",
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(PsanError::NonFinite("dataset features"));
            }
        }
        if role == Role::Target && !train.is_empty() {
            return Err(PsanError::Malformed {
                kind: "dataset",
                message: format!("target receiver {receiver_id} has labelled training samples"),
            });
        }
        Ok(ReceiverDataset {
            receiver_id,
            role,
            classes,
            train,
            test,
            counters: Arc::default(),
        })
    }

    pub fn receiver_id(&self) -> usize {
        self.receiver_id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(|s| s.features.len())
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    /// Split tag of every sample, train split first.
    pub fn splits(&self) -> Vec<Split> {
        let mut tags = vec![Split::Train; self.train.len()];
        tags.resize(self.train.len() + self.test.len(), Split::Test);
        tags
    }

    /// Labelled training samples. Counted as training label reads.
    pub fn train_samples(&self) -> &[LabeledSample] {
        self.counters.training.fetch_add(self.train.len(), Ordering::Relaxed);
        &self.train
    }

    /// Labelled test samples, for evaluation only. Counted separately.
    pub fn eval_samples(&self) -> &[LabeledSample] {
        self.counters.evaluation.fetch_add(self.test.len(), Ordering::Relaxed);
        &self.test
    }

    /// Feature vectors of the test split, without labels.
    pub fn test_features(&self) -> impl Iterator<Item = &[f64]> {
        self.test.iter().map(|s| s.features.as_slice())
    }

    pub fn training_label_reads(&self) -> usize {
        self.counters.training.load(Ordering::Relaxed)
    }

    pub fn evaluation_label_reads(&self) -> usize {
        self.counters.evaluation.load(Ordering::Relaxed)
    }

    /// Per-class sample counts in the train split (no label read is counted).
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.train {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Per-class numbers of train and test samples for a source receiver.
pub fn split_sizes(samples_per_class: usize, test_fraction: f64) -> Result<(usize, usize)> {
    if samples_per_class == 0 {
        return Err(PsanError::config("samples_per_class", "must be >= 1"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PsanError::config("test_fraction", "must lie in (0, 1)"));
    }
    let test = (samples_per_class as f64 * test_fraction / (1.0 - test_fraction)).round() as usize;
    if test == 0 {
        return Err(PsanError::config(
            "test_fraction",
            format!("{test_fraction} leaves the test split empty with {samples_per_class} samples per class"),
        ));
    }
    Ok((samples_per_class, test))
}

/// Synthesize every receiver's CSI samples and turn them into datasets.
///
/// Sources get `samples_per_class` train samples per class plus the test
/// samples implied by `test_fraction`; targets get the same total number of
/// samples, all in the test split.
pub fn build_datasets(
    scenario: &Scenario,
    samples_per_class: usize,
    test_fraction: f64,
    spec: &FeatureSpec,
) -> Result<Vec<ReceiverDataset>> {
    let (n_train, n_test) = split_sizes(samples_per_class, test_fraction)?;
    let cfg = &scenario.config;
    let seed = scenario.master_seed;
    spec.validate()?;
    if spec.shape != cfg.grid {
        return Err(PsanError::config("features.shape", "must equal the scenario grid shape"));
    }
    let per_class = n_train + n_test;
    let jobs: Vec<(usize, usize, usize)> = (0..scenario.receivers.len())
        .flat_map(|r| (0..cfg.classes).flat_map(move |c| (0..per_class).map(move |i| (r, c, i))))
        .collect();
    let features: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(r, c, i)| {
            let plan = &scenario.receivers[r];
            let id = plan.profile.receiver_id as u64;
            let mut stream = rng::stream(seed, &[tag::SAMPLE, id, c as u64, i as u64]);
            let gesture = perform_gesture(c, cfg.gesture_jitter, &mut stream)?;
            let grid = synthesize(&plan.profile, &gesture, cfg.grid, &cfg.radio, cfg.noise_std, &mut stream)?;
            extract_features(&grid, spec)
        })
        .collect::<Result<_>>()?;

    let mut features = features.into_iter();
    let mut out = Vec::with_capacity(scenario.receivers.len());
    for plan in &scenario.receivers {
        let id = plan.profile.receiver_id;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in 0..cfg.classes {
            let mut order: Vec<usize> = (0..per_class).collect();
            order.shuffle(&mut rng::stream(seed, &[tag::SPLIT, id as u64, c as u64]));
            let mut in_train = vec![false; per_class];
            if plan.role == Role::Source {
                for &i in &order[..n_train] {
                    in_train[i] = true;
                }
            }
            for flag in in_train {
                let sample = LabeledSample {
                    receiver_id: id,
                    features: features.next().expect("one feature vector per job"),
                    label: c,
                };
                if flag {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        out.push(ReceiverDataset::new(id, plan.role, cfg.classes, train, test)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct RecordOut<'a> {
    receiver_id: usize,
    split: Split,
    y: usize,
    x: &'a [f64],
}

#[derive(Deserialize)]
struct RecordIn {
    receiver_id: usize,
    split: Split,
    y: usize,
    x: Vec<f64>,
}

/// One JSON object per line: `{"receiver_id", "split", "y", "x"}`.
pub fn write_jsonl<W: Write>(datasets: &[ReceiverDataset], mut w: W) -> Result<()> {
    for d in datasets {
        for (split, samples) in [(Split::Train, &d.train), (Split::Test, &d.test)] {
            for s in samples.iter() {
                let rec = RecordOut {
                    receiver_id: s.receiver_id,
                    split,
                    y: s.label,
                    x: &s.features,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Read datasets back. Receivers without train samples are targets.
pub fn read_jsonl<R: BufRead>(r: R, classes: usize) -> Result<Vec<ReceiverDataset>> {
    let mut by_receiver: std::collections::BTreeMap<usize, (Vec<LabeledSample>, Vec<LabeledSample>)> =
        Default::default();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| PsanError::Malformed {
            kind: "dataset",
            message: format!("line {}: {e}", n + 1),
        })?;
        let sample = LabeledSample {
            receiver_id: rec.receiver_id,
            features: rec.x,
            label: rec.y,
        };
        let entry = by_receiver.entry(rec.receiver_id).or_default();
        match rec.split {
            Split::Train => entry.0.push(sample),
            Split::Test => entry.1.push(sample),
        }
    }
    by_receiver
        .into_iter()
        .map(|(id, (train, test))| {
            let role = if train.is_empty() { Role::Target } else { Role::Source };
            ReceiverDataset::new(id, role, classes, train, test)
        })
        .collect()
}
