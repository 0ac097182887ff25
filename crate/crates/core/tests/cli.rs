//! End-to-end runs of the `thc` binary on small planted datasets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn thc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thc"))
        .args(args)
        .current_dir(cwd)
        .env("THC_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn setup(dir: &Path, samples: usize, nodes: usize) {
    write(
        dir,
        "spec.toml",
        &format!("samples = {samples}\n[planted]\nnodes = {nodes}\nfine_blocks = 6\ncoarse_blocks = 3\nseed = 4\n"),
    );
    write(
        dir,
        "cfg.toml",
        "[model]\nschedule = [6, 3]\nheads = 2\nkey_dim = 6\nvalue_dim = 6\nreadout_hidden = 8\n[run]\nepochs = 2\nbatch_size = 8\n",
    );
    ok(&thc(&["generate", "--spec", "spec.toml", "--out", "data"], dir));
}

#[test]
fn generate_writes_one_matrix_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.toml", "samples = 100\n[planted]\nnodes = 60\n");
    let stdout = ok(&thc(&["generate", "--spec", "spec.toml", "--out", "d"], dir.path()));
    assert!(stdout.contains("100 samples") && stdout.contains("V = 60"), "{stdout}");
    let files: Vec<_> = fs::read_dir(dir.path().join("d"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(files.contains(&"manifest.json".to_string()));
    assert_eq!(files.len(), 101);
    let first = fs::read_to_string(dir.path().join("d/s00000.txt")).unwrap();
    assert_eq!(first.lines().count(), 61);
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = thc(&["generate", "--spec", "missing.toml", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
    assert_eq!(thc(&["frobnicate"], dir.path()).status.code(), Some(2));
    write(dir.path(), "bad.toml", "[model]\nschedule = [6, 7]\n");
    let out = thc(&["train", "--data", "d", "--config", "bad.toml", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_thc"))
        .args(["bench", "--sizes", "8"])
        .env("THC_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn print_config_round_trips_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&thc(
        &["train", "--print-config", "--seed", "11", "--schedule", "20,4", "--ablation", "linear_cluster"],
        dir.path(),
    ));
    let cfg = thc::train::TrainConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.run.seed, 11);
    assert_eq!(cfg.model.schedule, vec![20, 4]);
    assert_eq!(cfg.model.ablation, thc::ClusterMode::LinearCluster);
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_empty_history() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 40, 18);
    ok(&thc(&["train", "--data", "data", "--config", "cfg.toml", "--out", "r", "--epochs", "0"], dir.path()));
    let metrics = fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let ckpt = thc::checkpoint::Checkpoint::load(&dir.path().join("r/model.ckpt")).unwrap();
    assert_eq!(ckpt.header.epochs_completed, 0);
    assert_eq!(ckpt.header.selected_epoch, None);
    let fresh = thc::ThcModel::new(ckpt.header.model.clone(), 0).unwrap();
    assert_eq!(ckpt.params.as_slice(), fresh.params().tensors());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/run.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
}

#[test]
fn evaluate_reproduces_train_metrics_and_reports_baselines() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 60, 18);
    ok(&thc(&["train", "--data", "data", "--config", "cfg.toml", "--out", "r"], dir.path()));
    ok(&thc(&["evaluate", "--checkpoint", "r/model.ckpt", "--data", "data", "--out", "e"], dir.path()));
    let trained = fs::read_to_string(dir.path().join("r/test.json")).unwrap();
    let evaluated = fs::read_to_string(dir.path().join("e/test.json")).unwrap();
    assert_eq!(trained, evaluated);
    let report = fs::read_to_string(dir.path().join("e/report.csv")).unwrap();
    assert!(report.starts_with("method,level,purity,nmi,nmi_literal,homogeneity,homogeneity_std\n"));
    for method in ["thc,", "lloyd,", "louvain,"] {
        assert!(report.lines().any(|l| l.starts_with(method)), "{method} missing:\n{report}");
    }
    let clusters = fs::read_to_string(dir.path().join("e/clusters.csv")).unwrap();
    assert!(clusters.starts_with("level,cluster,node,truth\n"));
    // one row per node for each of levels 1, 2 and flat
    assert_eq!(clusters.lines().count(), 1 + 3 * 18);
    assert!(dir.path().join("e/assignment.json").exists());
}

#[test]
fn evaluate_without_truth_skips_cluster_report() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 40, 18);
    ok(&thc(&["train", "--data", "data", "--config", "cfg.toml", "--out", "r", "--epochs", "1"], dir.path()));
    let path = dir.path().join("data/manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest.as_object_mut().unwrap().remove("truth");
    fs::write(&path, manifest.to_string()).unwrap();
    let out = thc(&["evaluate", "--checkpoint", "r/model.ckpt", "--data", "data", "--out", "e"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground-truth"));
    assert!(dir.path().join("e/test.json").exists());
    assert!(!dir.path().join("e/report.csv").exists());
}

#[test]
fn evaluate_rejects_mismatched_node_count() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 40, 18);
    ok(&thc(&["train", "--data", "data", "--config", "cfg.toml", "--out", "r", "--epochs", "0"], dir.path()));
    write(dir.path(), "spec24.toml", "samples = 10\n[planted]\nnodes = 24\n");
    ok(&thc(&["generate", "--spec", "spec24.toml", "--out", "d24"], dir.path()));
    let out = thc(&["evaluate", "--checkpoint", "r/model.ckpt", "--data", "d24", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("18") && err.contains("24"), "{err}");
}

#[test]
fn folds_report_one_row_each_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 40, 18);
    ok(&thc(
        &["train", "--data", "data", "--config", "cfg.toml", "--out", "r", "--epochs", "1", "--folds", "3"],
        dir.path(),
    ));
    let results = fs::read_to_string(dir.path().join("r/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("mean±std,"));
    for f in 0..3 {
        assert!(dir.path().join(format!("r/fold{f}/model.ckpt")).exists());
        assert!(lines[1 + f].starts_with(&format!("{f},{f},")));
    }
}

#[test]
fn no_cluster_checkpoint_evaluates_without_assignment() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 40, 18);
    ok(&thc(
        &["train", "--data", "data", "--config", "cfg.toml", "--out", "r", "--epochs", "1", "--ablation", "no_cluster"],
        dir.path(),
    ));
    let out = thc(&["evaluate", "--checkpoint", "r/model.ckpt", "--data", "data", "--out", "e"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_cluster"));
    assert!(!dir.path().join("e/assignment.json").exists());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&thc(
        &["bench", "--sizes", "30", "--schedule", "5,30", "--dims", "4", "--repeats", "1", "--out", "b.csv"],
        dir.path(),
    ));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("30,30,4,"));
}
