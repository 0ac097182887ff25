//! `thc` command-line interface: dataset generation, training, evaluation
//! and layer benchmarks.
//!
//! Exit codes: 0 on success, 2 for usage, input and parse errors, 3 for
//! runtime and numeric failures. `THC_WORKERS` caps the worker thread count.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::{bench_layer, loglog_slope, write_bench_csv, BenchConfig};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::cluster_eval::{hierarchy_report, lloyd, louvain, write_clusters_csv, write_report_csv, Partition, ReportRow};
use crate::data::{generate, load_dataset, save_dataset, Dataset, PlantedSpec};
use crate::model::{ClusterMode, ThcModel};
use crate::train::{
    class_count, evaluate, finalize_assignment, run_training, split, write_metrics_csv, TestMetrics, TrainConfig, TrainError,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Runtime(m) => m,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "thc", version, about = "Hierarchical clustering transformer for brain-network classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic planted-community dataset.
    Generate(GenerateArgs),
    /// Train a model and write checkpoints, metrics and a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint and compare its clustering against baselines.
    Evaluate(EvaluateArgs),
    /// Time one layer with and without coarsening.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// TOML file with `samples` and a `[planted]` section.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec's sample count.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective spec and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML training configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cluster counts per layer, e.g. `20,4`.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<usize>>,
    #[arg(long)]
    ablation: Option<ClusterMode>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Repeated random splits; fold `f` uses seed `seed + f`.
    #[arg(long, default_value_t = 1)]
    folds: usize,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the Lloyd and Louvain baselines.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Node counts `n`.
    #[arg(long, value_delimiter = ',', default_value = "360")]
    sizes: Vec<usize>,
    /// Cluster counts `k`.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    schedule: Vec<usize>,
    /// Feature widths `d`.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    planted: PlantedSpec,
}

fn default_samples() -> usize {
    400
}

/// Provenance of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub git_revision: String,
    pub status: String,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, args: &[String], seed: u64) -> Self {
        Self {
            command: command.into(),
            args: args.to_vec(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_revision: env!("THC_GIT_REV").into(),
            status: "running".into(),
            seed,
            config: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_atomic(&dir.join("run.json"), (text + "\n").as_bytes()).map_err(runtime)
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("THC_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("THC_WORKERS must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = configure_workers().and_then(|()| match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a, &argv),
        Command::Evaluate(a) => cmd_evaluate(a, &argv),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    value.as_ref().ok_or_else(|| usage(format!("missing required flag {flag}")))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut file = match &a.spec {
        Some(p) => toml::from_str::<GenerateFile>(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => GenerateFile {
            samples: default_samples(),
            planted: PlantedSpec::default(),
        },
    };
    if let Some(n) = a.samples {
        file.samples = n;
    }
    if let Some(s) = a.seed {
        file.planted.seed = s;
    }
    if a.print_config {
        print!("{}", toml::to_string(&file).expect("spec serialises"));
        return Ok(());
    }
    let spec_path = require(&a.spec, "--spec")?;
    let out = require(&a.out, "--out")?;
    file.planted.validate().map_err(|e| usage(format!("{}: {e}", spec_path.display())))?;
    let dataset = generate(&file.planted, file.samples).map_err(usage)?;
    save_dataset(&dataset, out).map_err(runtime)?;
    println!("wrote {} samples with V = {} to {}", dataset.len(), dataset.nodes, out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(s) = &a.schedule {
        cfg.model.schedule = s.clone();
    }
    if let Some(m) = a.ablation {
        cfg.model.ablation = m;
    }
    if let Some(e) = a.epochs {
        cfg.run.epochs = e;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct FoldRow {
    fold: String,
    seed: String,
    best_epoch: String,
    val_auroc: String,
    test_auroc: String,
    test_acc: String,
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

fn mean_std(values: &[f64]) -> String {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return String::new();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    format!("{mean:.6}±{std:.6}")
}

fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let cfg = train_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if a.folds == 0 {
        return Err(usage("--folds must be at least 1"));
    }
    let data_dir = require(&a.data, "--data")?;
    let out = require(&a.out, "--out")?;
    let started = Instant::now();
    let dataset = load_dataset(data_dir).map_err(usage)?;
    if dataset.is_empty() {
        return Err(usage(format!("{}: dataset has no samples", data_dir.display())));
    }
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut manifest = RunManifest::new("train", argv, cfg.run.seed);
    manifest.config = Some(cfg.clone());
    manifest.inputs.insert("data".into(), data_dir.display().to_string());
    manifest.timings_ms.insert("load".into(), started.elapsed().as_secs_f64() * 1e3);
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes()).map_err(runtime)?;
    manifest.outputs.push("config.toml".into());
    manifest.write(out)?;

    let labels = dataset.labels();
    let mut rows = Vec::new();
    let mut summary: Vec<TestMetrics> = Vec::new();
    for fold in 0..a.folds {
        let fold_started = Instant::now();
        let mut fold_cfg = cfg.clone();
        fold_cfg.run.seed = cfg.run.seed + fold as u64;
        let dir = if a.folds == 1 { out.clone() } else { out.join(format!("fold{fold}")) };
        fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        let splits = split(&labels, fold_cfg.run.split, fold_cfg.run.seed).map_err(usage)?;
        let last = dir.join("last.ckpt");
        let initial = ThcModel::new(fold_cfg.model_config(dataset.nodes, class_count(&dataset.graphs)), fold_cfg.run.seed)
            .map_err(usage)?;
        Checkpoint::new(&initial, &fold_cfg, &splits, 0, None).save(&last).map_err(runtime)?;
        let outcome = run_training(&fold_cfg, &dataset.graphs, splits.clone(), |state| {
            Checkpoint::new(&state.model, &fold_cfg, &splits, state.epoch, None)
                .save(&last)
                .map_err(std::io::Error::other)
        })
        .map_err(|e| match e {
            TrainError::Config(_) => usage(&e),
            _ => runtime(&e),
        })?;
        let state = &outcome.state;
        Checkpoint::new(&state.model, &fold_cfg, &outcome.splits, state.epoch, outcome.test.best_epoch)
            .save(&dir.join("model.ckpt"))
            .map_err(runtime)?;
        let mut csv = Vec::new();
        write_metrics_csv(&state.history, &mut csv).map_err(runtime)?;
        write_atomic(&dir.join("metrics.csv"), &csv).map_err(runtime)?;
        let test_json = serde_json::to_string_pretty(&TestSummary::from(&outcome.test)).expect("serialises");
        write_atomic(&dir.join("test.json"), (test_json + "\n").as_bytes()).map_err(runtime)?;
        let prefix = if a.folds == 1 { String::new() } else { format!("fold{fold}/") };
        for f in ["last.ckpt", "model.ckpt", "metrics.csv", "test.json"] {
            manifest.outputs.push(format!("{prefix}{f}"));
        }
        manifest
            .timings_ms
            .insert(format!("train_fold{fold}"), fold_started.elapsed().as_secs_f64() * 1e3);
        println!(
            "fold {fold}: best epoch {}, val AUROC {}, test AUROC {}, test accuracy {}",
            outcome.test.best_epoch.map_or("-".into(), |e| e.to_string()),
            fmt_opt(outcome.test.val_auroc),
            fmt_opt(outcome.test.test_auroc),
            fmt_opt(outcome.test.test_acc),
        );
        rows.push(FoldRow {
            fold: fold.to_string(),
            seed: fold_cfg.run.seed.to_string(),
            best_epoch: outcome.test.best_epoch.map_or(String::new(), |e| e.to_string()),
            val_auroc: fmt_opt(outcome.test.val_auroc),
            test_auroc: fmt_opt(outcome.test.test_auroc),
            test_acc: fmt_opt(outcome.test.test_acc),
        });
        summary.push(outcome.test);
    }
    let col = |f: fn(&TestMetrics) -> f64| summary.iter().map(f).collect::<Vec<_>>();
    rows.push(FoldRow {
        fold: "mean±std".into(),
        seed: String::new(),
        best_epoch: String::new(),
        val_auroc: mean_std(&col(|t| t.val_auroc)),
        test_auroc: mean_std(&col(|t| t.test_auroc)),
        test_acc: mean_std(&col(|t| t.test_acc)),
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(runtime)?;
    }
    let bytes = w.into_inner().map_err(runtime)?;
    write_atomic(&out.join("results.csv"), &bytes).map_err(runtime)?;
    manifest.outputs.push("results.csv".into());
    if a.folds > 1 {
        let last = rows.last().unwrap();
        println!("test AUROC {} | accuracy {}", last.test_auroc, last.test_acc);
    }
    manifest.status = "complete".into();
    manifest.timings_ms.insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
    manifest.write(out)
}

/// JSON-friendly test metrics: undefined values become `null`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TestSummary {
    pub best_epoch: Option<usize>,
    pub val_auroc: Option<f64>,
    pub test_auroc: Option<f64>,
    pub test_acc: Option<f64>,
}

impl From<&TestMetrics> for TestSummary {
    fn from(t: &TestMetrics) -> Self {
        let f = |v: f64| (!v.is_nan()).then_some(v);
        Self {
            best_epoch: t.best_epoch,
            val_auroc: f(t.val_auroc),
            test_auroc: f(t.test_auroc),
            test_acc: f(t.test_acc),
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(usage)?;
    let dataset = load_dataset(&a.data).map_err(usage)?;
    let header = &ckpt.header;
    if header.model.input_size != dataset.nodes {
        return Err(runtime(format!(
            "checkpoint expects V = {} but the dataset has V = {}",
            header.model.input_size, dataset.nodes
        )));
    }
    let max_index = header.splits.train.iter().chain(&header.splits.val).chain(&header.splits.test).max();
    if max_index.is_some_and(|&m| m >= dataset.len()) {
        return Err(runtime(format!(
            "checkpoint split refers to sample {} but the dataset has {} samples",
            max_index.unwrap(),
            dataset.len()
        )));
    }
    let model = ckpt.model().map_err(runtime)?;
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut manifest = RunManifest::new("evaluate", argv, a.seed);
    manifest.config = Some(header.train.clone());
    manifest.inputs.insert("checkpoint".into(), a.checkpoint.display().to_string());
    manifest.inputs.insert("data".into(), a.data.display().to_string());

    let (test_auroc, test_acc) = evaluate(&model, &dataset.graphs, &header.splits.test).map_err(runtime)?;
    let (val_auroc, _) = evaluate(&model, &dataset.graphs, &header.splits.val).map_err(runtime)?;
    let metrics = TestMetrics {
        best_epoch: header.selected_epoch,
        val_auroc,
        test_auroc,
        test_acc,
    };
    let text = serde_json::to_string_pretty(&TestSummary::from(&metrics)).expect("serialises");
    write_atomic(&a.out.join("test.json"), (text + "\n").as_bytes()).map_err(runtime)?;
    manifest.outputs.push("test.json".into());
    println!("test AUROC {} | accuracy {}", fmt_opt(test_auroc), fmt_opt(test_acc));
    manifest.timings_ms.insert("classify".into(), started.elapsed().as_secs_f64() * 1e3);

    if header.model.cluster_mode == ClusterMode::NoCluster {
        eprintln!("notice: the no_cluster ablation has no assignment; cluster report skipped");
    } else {
        let phase = Instant::now();
        let inputs: Vec<_> = header.splits.train.iter().map(|&i| &dataset.graphs[i].adjacency).collect();
        let fa = finalize_assignment(&model, &inputs).map_err(runtime)?;
        let json = serde_json::json!({
            "soft": fa.soft.iter().map(|t| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "hard": fa.hard,
            "node_hard": fa.node_hard,
            "flat_hard": fa.flat_hard,
        });
        write_atomic(&a.out.join("assignment.json"), (json.to_string() + "\n").as_bytes()).map_err(runtime)?;
        manifest.outputs.push("assignment.json".into());
        match &dataset.truth {
            None => eprintln!("notice: dataset has no ground-truth communities; cluster report skipped"),
            Some(_) => {
                cluster_outputs(&dataset, &header.splits.train, &header.model.schedule, &fa, a.seed, &a.out)?;
                manifest.outputs.push("report.csv".into());
                manifest.outputs.push("clusters.csv".into());
            }
        }
        manifest.timings_ms.insert("cluster".into(), phase.elapsed().as_secs_f64() * 1e3);
    }
    manifest.status = "complete".into();
    manifest.timings_ms.insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
    manifest.write(&a.out)
}

/// `(level, cluster, node, truth)` row of `clusters.csv`.
pub type Membership = (String, usize, usize, usize);

/// Report rows for the trained assignment and both baselines. Baselines
/// cluster the mean training adjacency: Lloyd with the first and last
/// schedule sizes, Louvain once, each scored against the matching truth.
pub fn comparison_rows(
    dataset: &Dataset,
    train: &[usize],
    schedule: &[usize],
    fa: &crate::train::FinalAssignment,
    seed: u64,
) -> std::result::Result<(Vec<ReportRow>, Vec<Membership>), String> {
    let truth = dataset.truth.as_ref().ok_or("dataset has no ground truth")?;
    let fine = Partition::new(&truth.fine);
    let coarse = Partition::new(&truth.coarse);
    let h = hierarchy_report(&fa.soft, &fa.flat, &fine, &coarse).map_err(|e| e.to_string())?;
    let mut rows: Vec<ReportRow> = h.levels.iter().map(|l| ReportRow::new("thc", &l.level, &l.report)).collect();
    let mean = dataset.mean_adjacency(train);
    let first = *schedule.first().ok_or("empty schedule")?;
    let last = *schedule.last().unwrap();
    let report = |p: &Partition, t: &Partition| crate::cluster_eval::cluster_report(p, t).map_err(|e| e.to_string());
    let l1 = lloyd(&mean, first, seed).map_err(|e| e.to_string())?;
    rows.push(ReportRow::new("lloyd", "1", &report(&l1.partition, &fine)?));
    let lk = lloyd(&mean, last, seed).map_err(|e| e.to_string())?;
    rows.push(ReportRow::new("lloyd", "flat", &report(&lk.partition, &coarse)?));
    let lv = louvain(&mean, seed).map_err(|e| e.to_string())?;
    if lv.clipped > 0 {
        eprintln!("notice: louvain clipped {} negative entries to zero", lv.clipped);
    }
    rows.push(ReportRow::new("louvain", "1", &report(&lv.partition, &fine)?));
    rows.push(ReportRow::new("louvain", "flat", &report(&lv.partition, &coarse)?));
    for l in &h.levels {
        if l.report.single_cluster {
            eprintln!("notice: thc level {} is a single cluster; homogeneity set to 1 by convention", l.level);
        }
    }
    Ok((rows, h.memberships))
}

fn cluster_outputs(
    dataset: &Dataset,
    train: &[usize],
    schedule: &[usize],
    fa: &crate::train::FinalAssignment,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (rows, memberships) = comparison_rows(dataset, train, schedule, fa, seed).map_err(runtime)?;
    let mut buf = Vec::new();
    write_report_csv(&rows, &mut buf).map_err(runtime)?;
    write_atomic(&out.join("report.csv"), &buf).map_err(runtime)?;
    let mut buf = Vec::new();
    write_clusters_csv(&memberships, &mut buf).map_err(runtime)?;
    write_atomic(&out.join("clusters.csv"), &buf).map_err(runtime)?;
    for r in &rows {
        println!("{:8} level {:4} purity {:.3} nmi {:.3} homogeneity {:.3}", r.method, r.level, r.purity, r.nmi, r.homogeneity);
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.sizes.iter().chain(&a.schedule).chain(&a.dims).any(|&v| v == 0) || a.heads == 0 {
        return Err(usage("sizes, schedule, dims and heads must be positive"));
    }
    let cfg = BenchConfig {
        heads: a.heads,
        repeats: a.repeats,
        seed: a.seed,
    };
    let mut rows = Vec::new();
    for &n in &a.sizes {
        for &k in &a.schedule {
            for &d in &a.dims {
                let row = bench_layer(n, k, d, &cfg).map_err(runtime)?;
                eprintln!(
                    "n={n} k={k} d={d}: layer1 {:.2} ms, clustered {:.2} ms, unclustered {:.2} ms, speedup {:.1}x",
                    row.layer1_ms, row.clustered_layer2_ms, row.unclustered_layer2_ms, row.speedup
                );
                rows.push(row);
            }
        }
    }
    if a.dims.len() > 1 {
        for &n in &a.sizes {
            for &k in &a.schedule {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.n == n && r.k == k)
                    .map(|r| (r.d as f64, r.unclustered_layer2_ms))
                    .collect();
                if let Some(s) = loglog_slope(&pts) {
                    eprintln!("n={n} k={k}: log-log slope of layer time in d = {s:.2}");
                }
            }
        }
    }
    let mut buf = Vec::new();
    write_bench_csv(&rows, &mut buf).map_err(runtime)?;
    match &a.out {
        Some(p) => write_atomic(p, &buf).map_err(runtime),
        None => {
            print!("{}", String::from_utf8(buf).expect("csv is utf-8"));
            Ok(())
        }
    }
}
