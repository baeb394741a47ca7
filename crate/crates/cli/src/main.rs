//! `psan`: batch pipeline for semantic-aware federated gesture models.
//!
//! ```text
//! psan gen-data --config run.toml --out data
//! psan train    --data data --mode psan   --out psan
//! psan train    --data data --mode fedavg --out fedavg
//! psan train    --data data --mode local  --out local
//! psan transfer --data data --models psan --out transfer
//! psan eval     --data data --psan psan --fedavg fedavg --local local --transfer transfer --out eval
//! psan eval     --config run.toml --seeds 5 --out sweep
//! ```
//!
//! Exit status: 0 success, 1 usage or I/O problem, 2 invalid configuration
//! or inconsistent inputs, 3 a training invariant or a hard acceptance
//! check failed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use psan_core::config::RunConfig;
use psan_core::dataset::{read_jsonl, write_jsonl, ReceiverDataset};
use psan_core::eval::{
    build_report, summarize, write_curve_csv, write_reports_csv, EvalReport, RunModels, SeedSummary,
};
use psan_core::manifest::{RunManifest, Stage, MANIFEST_FILE};
use psan_core::mapping::write_diagnostics_csv;
use psan_core::model::{read_checkpoint, write_checkpoint, ModelVector};
use psan_core::pipeline::{fit_and_transfer, run_experiment_with_curves, train_global, train_local_all, train_psan};
use psan_core::scenario::{Role, Scenario};
use psan_core::transfer::write_weights_csv;
use psan_core::{Metric, PsanError};

#[derive(Parser)]
#[command(name = "psan", version, about = "Semantic-aware personalized federated gesture models")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Root for default output directories.
    #[arg(long, global = true, env = "PSAN_OUT_ROOT", default_value = "psan-out")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Psan,
    Fedavg,
    Local,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Psan => "psan",
            Mode::Fedavg => "fedavg",
            Mode::Local => "local",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate receiver profiles and labelled datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train source models.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "psan")]
        mode: Mode,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the semantic mapping and build target models.
    Transfer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Must agree with the metric of the training run.
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare Local, FedAvg and pSAN, either from stage directories or by
    /// running the whole pipeline for several seeds.
    Eval {
        #[arg(long, conflicts_with = "config")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        psan: Option<PathBuf>,
        #[arg(long, requires = "data")]
        fedavg: Option<PathBuf>,
        #[arg(long, requires = "data")]
        local: Option<PathBuf>,
        #[arg(long, requires = "data")]
        transfer: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of consecutive seeds starting at the configured seed.
        #[arg(long, requires = "config", default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Validation(String),
    Invariant(String),
}

impl From<PsanError> for Failure {
    fn from(e: PsanError) -> Self {
        let msg = e.to_string();
        match e {
            PsanError::Io(_) => Failure::Usage(msg),
            PsanError::StepSizeViolation { .. }
            | PsanError::ServerStepMismatch(_)
            | PsanError::NonFinite(_)
            | PsanError::OracleNotConverged { .. } => Failure::Invariant(msg),
            _ => Failure::Validation(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let default_out = |stage: &str, out: Option<PathBuf>| out.unwrap_or_else(|| cli.out_root.join(stage));
    match cli.command {
        Command::GenData { ref config, seed, ref out } => {
            gen_data(config.as_deref(), seed, &default_out("data", out.clone()))
        }
        Command::Train {
            ref data,
            mode,
            rounds,
            ref out,
        } => train(data, mode, rounds, &default_out(mode.name(), out.clone())),
        Command::Transfer {
            ref data,
            ref models,
            metric,
            ref out,
        } => transfer(data, models, metric.map(Metric::from), &default_out("transfer", out.clone())),
        Command::Eval {
            ref data,
            ref psan,
            ref fedavg,
            ref local,
            ref transfer,
            ref config,
            seeds,
            ref out,
        } => {
            let out = default_out("eval", out.clone());
            match (data, config) {
                (Some(data), None) => eval_dirs(data, psan, fedavg, local, transfer, &out),
                (None, config) => eval_seeds(config.as_deref(), seeds, &out),
                (Some(_), Some(_)) => Err(Failure::Usage("--data and --config are exclusive".into())),
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            Ok(RunConfig::from_toml(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

/// Create `dir`, refusing to reuse a directory written by another stage.
fn prepare_out(dir: &Path, stage: Stage) -> Outcome<()> {
    if dir.join(MANIFEST_FILE).exists() {
        let existing = RunManifest::read(dir)?;
        if existing.stage != stage {
            return Err(Failure::Validation(format!(
                "{} already holds {} output",
                dir.display(),
                existing.stage.name()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    Ok(())
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_model(dir: &Path, name: &str, model: &ModelVector) -> Outcome<String> {
    let rel = format!("models/{name}.psnm");
    fs::create_dir_all(dir.join("models"))?;
    let mut w = create(&dir.join(&rel))?;
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(rel)
}

fn read_model(dir: &Path, name: &str) -> Outcome<ModelVector> {
    let path = dir.join(format!("models/{name}.psnm"));
    let f = File::open(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

struct DataDir {
    manifest: RunManifest,
    scenario: Scenario,
    datasets: Vec<ReceiverDataset>,
}

fn load_data(dir: &Path) -> Outcome<DataDir> {
    let manifest = RunManifest::read(dir)?;
    manifest.expect_stage(Stage::GenData)?;
    let scenario = Scenario::from_toml(&fs::read_to_string(dir.join("scenario.toml"))?)?;
    let f = File::open(dir.join("datasets.jsonl"))?;
    let datasets = read_jsonl(BufReader::new(f), manifest.config.scenario.classes)?;
    if datasets.len() != scenario.receivers.len() {
        return Err(Failure::Validation("datasets and scenario disagree on the receiver count".into()));
    }
    Ok(DataDir {
        manifest,
        scenario,
        datasets,
    })
}

fn source_refs(datasets: &[ReceiverDataset]) -> Vec<&ReceiverDataset> {
    datasets.iter().filter(|d| d.role() == Role::Source).collect()
}

fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    prepare_out(out, Stage::GenData)?;
    let generated = psan_core::pipeline::generate(&cfg)?;
    fs::write(out.join("scenario.toml"), generated.scenario.to_toml()?)?;
    let mut w = create(&out.join("datasets.jsonl"))?;
    write_jsonl(&generated.datasets, &mut w)?;
    w.flush()?;
    let mut manifest = RunManifest::new(Stage::GenData, &cfg)?;
    manifest.artifacts = vec!["scenario.toml".into(), "datasets.jsonl".into()];
    manifest.write(out)?;
    info!(
        "wrote {} receivers ({} sources) to {}",
        generated.datasets.len(),
        generated.sources().len(),
        out.display()
    );
    Ok(())
}

fn train(data: &Path, mode: Mode, rounds: Option<usize>, out: &Path) -> Outcome<()> {
    let d = load_data(data)?;
    let mut cfg = d.manifest.config.clone();
    if let Some(r) = rounds {
        cfg.schedule.rounds = r;
    }
    cfg.validate()?;
    prepare_out(out, Stage::Train)?;
    let sources = source_refs(&d.datasets);
    let mut manifest = RunManifest::new(Stage::Train, &cfg)?;
    manifest.settings.insert("mode".into(), mode.name().into());
    manifest.inputs.insert("data".into(), d.manifest.digest()?);
    let start = std::time::Instant::now();
    match mode {
        Mode::Psan => {
            let output = train_psan(&cfg, &sources, |_, _| Ok(()))?;
            for (m, s) in output.models.iter().zip(&sources) {
                manifest.artifacts.push(write_model(out, &format!("source_{}", s.receiver_id()), m)?);
            }
            let mut w = create(&out.join("rounds.jsonl"))?;
            for log in &output.logs {
                serde_json::to_writer(&mut w, log).map_err(PsanError::from)?;
                writeln!(w)?;
            }
            w.flush()?;
            manifest.artifacts.push("rounds.jsonl".into());
        }
        Mode::Local => {
            for (m, s) in train_local_all(&cfg, &sources)?.iter().zip(&sources) {
                manifest.artifacts.push(write_model(out, &format!("source_{}", s.receiver_id()), m)?);
            }
        }
        Mode::Fedavg => {
            let global = train_global(&cfg, &sources)?;
            manifest.artifacts.push(write_model(out, "global", &global)?);
        }
    }
    info!("{} training finished in {:.1} s", mode.name(), start.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok(())
}

fn load_train(dir: &Path, data: &DataDir, mode: Mode) -> Outcome<RunManifest> {
    let m = RunManifest::read(dir)?;
    m.expect_stage(Stage::Train)?;
    m.expect_input("data", &data.manifest)?;
    let found = m.settings.get("mode").map(String::as_str).unwrap_or("");
    if found != mode.name() {
        return Err(Failure::Validation(format!(
            "{} holds {found} models, expected {}",
            dir.display(),
            mode.name()
        )));
    }
    Ok(m)
}

fn transfer(data: &Path, models: &Path, metric: Option<Metric>, out: &Path) -> Outcome<()> {
    let d = load_data(data)?;
    let trained = RunManifest::read(models)?;
    trained.expect_stage(Stage::Train)?;
    trained.expect_input("data", &d.manifest)?;
    let mode = trained.settings.get("mode").cloned().unwrap_or_default();
    if mode == "fedavg" {
        return Err(Failure::Validation("transfer needs per-source models, not a single FedAvg model".into()));
    }
    let cfg = trained.config.clone();
    if let Some(m) = metric {
        if m != cfg.transfer.metric {
            return Err(PsanError::MetricMismatch {
                fitted: cfg.transfer.metric.to_string(),
                requested: m.to_string(),
            }
            .into());
        }
    }
    prepare_out(out, Stage::Transfer)?;
    let ids: Vec<usize> = d.scenario.sources().map(|p| p.profile.receiver_id).collect();
    let source_models: Vec<ModelVector> = ids
        .iter()
        .map(|id| read_model(models, &format!("source_{id}")))
        .collect::<Outcome<_>>()?;
    let t = fit_and_transfer(&cfg, &d.scenario, &ids, &source_models, cfg.transfer.metric)?;
    if t.models.is_empty() {
        warn!("scenario has no target receivers; nothing to transfer");
    }
    let mut manifest = RunManifest::new(Stage::Transfer, &cfg)?;
    manifest.settings.insert("mode".into(), mode);
    manifest.settings.insert("bandwidth".into(), format!("{:e}", t.bandwidth));
    manifest.inputs.insert("data".into(), d.manifest.digest()?);
    manifest.inputs.insert("models".into(), trained.digest()?);
    fs::write(out.join("mapping.json"), t.mapping.to_json()?)?;
    let mut w = create(&out.join("pairs.csv"))?;
    write_diagnostics_csv(&t.mapping, &t.pairs, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("weights.csv"))?;
    write_weights_csv(&t.weights, &mut w)?;
    w.flush()?;
    manifest.artifacts.extend(["mapping.json".into(), "pairs.csv".into(), "weights.csv".into()]);
    for (m, w) in t.models.iter().zip(&t.weights) {
        manifest.artifacts.push(write_model(out, &format!("target_{}", w.target_id), m)?);
    }
    manifest.write(out)?;
    info!("built {} target models", t.models.len());
    Ok(())
}

fn write_report_files(out: &Path, reports: &[EvalReport]) -> Outcome<Vec<String>> {
    let mut files = Vec::new();
    for r in reports {
        let name = format!("report_seed_{}.json", r.seed);
        fs::write(out.join(&name), serde_json::to_string_pretty(r).map_err(PsanError::from)? + "\n")?;
        files.push(name);
    }
    let mut w = create(&out.join("report.csv"))?;
    write_reports_csv(reports, &mut w)?;
    w.flush()?;
    files.push("report.csv".into());
    Ok(files)
}

/// Whether pSAN beats both baselines on the targets.
fn ordering_holds(psan: f64, global: f64, local: f64) -> bool {
    psan > global && psan > local
}

fn eval_dirs(
    data: &Path,
    psan: &Option<PathBuf>,
    fedavg: &Option<PathBuf>,
    local: &Option<PathBuf>,
    transfer: &Option<PathBuf>,
    out: &Path,
) -> Outcome<()> {
    let mut missing = Vec::new();
    for (flag, dir) in [("--psan", psan), ("--fedavg", fedavg), ("--local", local), ("--transfer", transfer)] {
        match dir {
            None => missing.push(format!("{flag} (not given)")),
            Some(p) if !p.join(MANIFEST_FILE).exists() => missing.push(format!("{flag} {}", p.display())),
            Some(_) => {}
        }
    }
    if !data.join(MANIFEST_FILE).exists() {
        missing.insert(0, format!("--data {}", data.display()));
    }
    if !missing.is_empty() {
        return Err(Failure::Usage(format!("missing artifacts: {}", missing.join(", "))));
    }
    let (psan, fedavg, local, transfer) = (
        psan.as_deref().expect("checked"),
        fedavg.as_deref().expect("checked"),
        local.as_deref().expect("checked"),
        transfer.as_deref().expect("checked"),
    );
    let d = load_data(data)?;
    let psan_m = load_train(psan, &d, Mode::Psan)?;
    load_train(fedavg, &d, Mode::Fedavg)?;
    load_train(local, &d, Mode::Local)?;
    let transfer_m = RunManifest::read(transfer)?;
    transfer_m.expect_stage(Stage::Transfer)?;
    transfer_m.expect_input("models", &psan_m)?;
    transfer_m.expect_input("data", &d.manifest)?;

    let source_ids: Vec<usize> = d.scenario.sources().map(|p| p.profile.receiver_id).collect();
    let target_ids: Vec<usize> = d.scenario.targets().map(|p| p.profile.receiver_id).collect();
    let load_all = |dir: &Path, prefix: &str, ids: &[usize]| -> Outcome<Vec<ModelVector>> {
        ids.iter().map(|id| read_model(dir, &format!("{prefix}_{id}"))).collect()
    };
    let psan_sources = load_all(psan, "source", &source_ids)?;
    let local_sources = load_all(local, "source", &source_ids)?;
    let psan_targets = load_all(transfer, "target", &target_ids)?;
    let global = read_model(fedavg, "global")?;
    let cfg = &transfer_m.config;
    let report = build_report(
        &d.datasets,
        &RunModels {
            psan_sources: &psan_sources,
            psan_targets: &psan_targets,
            global: &global,
            local_sources: &local_sources,
        },
        cfg.seed,
        cfg.transfer.metric,
    )?;
    prepare_out(out, Stage::Eval)?;
    let mut manifest = RunManifest::new(Stage::Eval, cfg)?;
    for (role, m) in [("data", &d.manifest), ("psan", &psan_m), ("transfer", &transfer_m)] {
        manifest.inputs.insert(role.into(), m.digest()?);
    }
    manifest.artifacts = write_report_files(out, std::slice::from_ref(&report))?;
    manifest.write(out)?;
    print_report(&report);
    if cfg.eval.hard_ordering {
        if let Some(t) = report.target_means {
            if !ordering_holds(t.psan, t.global, t.local) {
                return Err(Failure::Invariant("pSAN does not beat both baselines on the targets".into()));
            }
        }
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    let s = r.source_means;
    println!(
        "seed {}: sources local {:.4} global {:.4} psan {:.4}",
        r.seed, s.local, s.global, s.psan
    );
    if let Some(t) = r.target_means {
        println!(
            "seed {}: targets local {:.4} global {:.4} psan {:.4}",
            r.seed, t.local, t.global, t.psan
        );
    }
}

fn eval_seeds(config: Option<&Path>, seeds: u64, out: &Path) -> Outcome<()> {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let base = load_config(config)?;
    prepare_out(out, Stage::Eval)?;
    let mut reports = Vec::new();
    let mut deltas = Vec::new();
    let mut manifest = RunManifest::new(Stage::Eval, &base)?;
    manifest.settings.insert("seeds".into(), seeds.to_string());
    for i in 0..seeds {
        let cfg = base.with_seed(base.seed + i);
        let (experiment, curves) = run_experiment_with_curves(&cfg)?;
        let name = format!("curves_seed_{}.csv", cfg.seed);
        let mut w = create(&out.join(&name))?;
        write_curve_csv(&curves.curve, &mut w)?;
        w.flush()?;
        manifest.artifacts.push(name);
        deltas.push(curves.final_delta_points());
        print_report(&experiment.report);
        reports.push(experiment.report);
    }
    manifest.artifacts.extend(write_report_files(out, &reports)?);
    let summary = SweepSummary {
        medians: summarize(&reports),
        cosine_minus_euclidean_points: psan_core::eval::median(&deltas),
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(PsanError::from)? + "\n",
    )?;
    manifest.artifacts.push("summary.json".into());
    manifest.write(out)?;
    let m = &summary.medians;
    println!(
        "median over {} seeds: targets local {:.4} global {:.4} psan {:.4}; cosine - euclidean {:+.2} points",
        seeds, m.target_local, m.target_global, m.target_psan, summary.cosine_minus_euclidean_points
    );
    if base.eval.hard_ordering && base.scenario.targets > 0 && !ordering_holds(m.target_psan, m.target_global, m.target_local) {
        return Err(Failure::Invariant("pSAN does not beat both baselines on the targets".into()));
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct SweepSummary {
    medians: SeedSummary,
    cosine_minus_euclidean_points: f64,
}
