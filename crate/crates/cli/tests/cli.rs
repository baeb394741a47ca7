use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psan_core::config::RunConfig;
use psan_core::dataset::read_jsonl;
use psan_core::model::read_checkpoint;
use psan_core::scenario::Role;
use psan_core::train::initial_model;
use tempfile::TempDir;

const SMALL: &str = "seed = 5\n[scenario]\nsources = 4\ntargets = 2\n[schedule]\nrounds = 6\n[mapping]\nepochs = 300\n";

fn psan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psan"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("PSAN_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = psan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Every file below `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// gen-data, three trainings, transfer and eval under `root`.
fn full_pipeline(root: &Path, threads: &str) {
    fs::write(root.join("run.toml"), SMALL).unwrap();
    ok(root, &["--threads", threads, "gen-data", "--config", "run.toml", "--out", "data"]);
    for mode in ["psan", "fedavg", "local"] {
        ok(root, &["--threads", threads, "train", "--data", "data", "--mode", mode, "--out", mode]);
    }
    ok(root, &["--threads", threads, "transfer", "--data", "data", "--models", "psan", "--out", "transfer"]);
    ok(
        root,
        &[
            "--threads", threads, "eval", "--data", "data", "--psan", "psan", "--fedavg", "fedavg", "--local", "local",
            "--transfer", "transfer", "--out", "eval",
        ],
    );
}

#[test]
fn default_config_generates_eighteen_receivers_reproducibly() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-data", "--out", "a"]);
    ok(tmp.path(), &["gen-data", "--out", "b"]);
    let a = snapshot(&tmp.path().join("a"));
    assert_eq!(a, snapshot(&tmp.path().join("b")));
    let datasets = read_jsonl(BufReader::new(File::open(tmp.path().join("a/datasets.jsonl")).unwrap()), 6).unwrap();
    assert_eq!(datasets.len(), 18);
    assert_eq!(datasets.iter().filter(|d| d.role() == Role::Source).count(), 12);
    assert!(datasets.iter().filter(|d| d.role() == Role::Source).all(|d| d.train_len() == 18));
    // rerunning into the same directory leaves identical bytes
    ok(tmp.path(), &["gen-data", "--out", "a"]);
    assert_eq!(a, snapshot(&tmp.path().join("a")));
}

#[test]
fn single_source_config_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[scenario]\nsources = 1\n").unwrap();
    let out = psan(tmp.path(), &["gen-data", "--config", "bad.toml", "--out", "d"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenario.sources") && err.contains("pairs"), "{err}");
    fs::write(tmp.path().join("typo.toml"), "[scenario]\nsourcez = 3\n").unwrap();
    assert_eq!(code(&psan(tmp.path(), &["gen-data", "--config", "typo.toml"])), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&psan(tmp.path(), &["train", "--data", "x", "--mode", "bogus"])), 1);
    assert_eq!(code(&psan(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&psan(tmp.path(), &["train", "--data", "missing"])), 1);
}

#[test]
fn pipeline_is_identical_at_any_thread_count() {
    let one = TempDir::new().unwrap();
    let four = TempDir::new().unwrap();
    full_pipeline(one.path(), "1");
    full_pipeline(four.path(), "4");
    let a = snapshot(one.path());
    assert_eq!(a, snapshot(four.path()));

    // report grid: 3 methods for each of the 6 receivers
    let csv = String::from_utf8(a[Path::new("eval/report.csv")].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 6);
    // audit CSV: one row per (target, source)
    let weights = String::from_utf8(a[Path::new("transfer/weights.csv")].clone()).unwrap();
    assert_eq!(weights.lines().count(), 1 + 2 * 4);
    for dir in ["data", "psan", "fedavg", "local", "transfer", "eval"] {
        let manifests = a.keys().filter(|p| p.starts_with(dir) && p.ends_with("manifest.json")).count();
        assert_eq!(manifests, 1, "{dir}");
    }
    assert!(a.contains_key(Path::new("psan/rounds.jsonl")));
    assert!(a.contains_key(Path::new("fedavg/models/global.psnm")));
    assert!(a.contains_key(Path::new("transfer/models/target_5.psnm")));
}

#[test]
fn zero_rounds_keep_the_broadcast_initialization() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    fs::write(root.join("run.toml"), SMALL).unwrap();
    ok(root, &["gen-data", "--config", "run.toml", "--out", "data"]);
    ok(root, &["train", "--data", "data", "--rounds", "0", "--out", "psan"]);
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let init = initial_model(cfg.arch(), &cfg.train_schedule()).unwrap();
    for id in 0..4 {
        let m = read_checkpoint(File::open(root.join(format!("psan/models/source_{id}.psnm"))).unwrap()).unwrap();
        assert_eq!(m, init);
    }
}

#[test]
fn mixed_or_missing_artifacts_are_refused() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    full_pipeline(root, "2");
    // different data directory
    fs::write(root.join("other.toml"), SMALL.replace("seed = 5", "seed = 6")).unwrap();
    ok(root, &["gen-data", "--config", "other.toml", "--out", "other"]);
    let out = psan(root, &["transfer", "--data", "other", "--models", "psan", "--out", "t2"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    // metric flag disagreeing with the training run
    let out = psan(root, &["transfer", "--data", "data", "--models", "psan", "--metric", "euclidean", "--out", "t3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("metric mismatch"));
    // FedAvg directory used where psan models are expected
    let out = psan(
        root,
        &[
            "eval", "--data", "data", "--psan", "fedavg", "--fedavg", "fedavg", "--local", "local", "--transfer",
            "transfer", "--out", "e2",
        ],
    );
    assert_eq!(code(&out), 2);
    // missing artifacts are listed together
    let out = psan(root, &["eval", "--data", "data", "--psan", "psan", "--out", "e3"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--fedavg") && err.contains("--local") && err.contains("--transfer"), "{err}");
    // unknown manifest version
    let path = root.join("psan/manifest.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 7");
    fs::write(&path, text).unwrap();
    let out = psan(root, &["transfer", "--data", "data", "--models", "psan", "--out", "t4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}

#[test]
fn transfer_without_targets_succeeds_with_a_warning() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    fs::write(root.join("run.toml"), SMALL.replace("targets = 2", "targets = 0")).unwrap();
    ok(root, &["gen-data", "--config", "run.toml", "--out", "data"]);
    ok(root, &["train", "--data", "data", "--out", "psan"]);
    let out = Command::new(env!("CARGO_BIN_EXE_psan"))
        .args(["transfer", "--data", "data", "--models", "psan", "--out", "transfer"])
        .current_dir(root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no target receivers"));
    let weights = fs::read_to_string(root.join("transfer/weights.csv")).unwrap();
    assert_eq!(weights.lines().count(), 1);
}

#[test]
fn seed_sweep_reports_medians_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    fs::write(root.join("run.toml"), SMALL).unwrap();
    let out = ok(root, &["eval", "--config", "run.toml", "--seeds", "2", "--out", "a"]);
    ok(root, &["--threads", "3", "eval", "--config", "run.toml", "--seeds", "2", "--out", "b"]);
    let a = snapshot(&root.join("a"));
    assert_eq!(a, snapshot(&root.join("b")));
    for f in ["report_seed_5.json", "report_seed_6.json", "curves_seed_5.csv", "summary.json", "manifest.json"] {
        assert!(a.contains_key(Path::new(f)), "{f}");
    }
    let csv = String::from_utf8(a[Path::new("report.csv")].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("median over 2 seeds"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_psan"))
        .args(["gen-data", "--config", "run.toml"])
        .current_dir(tmp.path())
        .env("PSAN_OUT_ROOT", tmp.path().join("runs"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("runs/data/manifest.json").exists());
}

#[test]
fn hard_ordering_failure_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    // with zero rounds every method is the shared initialization, so pSAN
    // cannot beat the baselines
    fs::write(
        root.join("run.toml"),
        SMALL.replace("rounds = 6", "rounds = 0") + "[eval]\nhard_ordering = true\n",
    )
    .unwrap();
    let out = psan(root, &["eval", "--config", "run.toml", "--out", "e"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
