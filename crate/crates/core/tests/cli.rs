mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sisom::config::sha256_hex;
use sisom::data::Dataset;

fn sisom(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sisom"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn golden() -> std::path::PathBuf {
    common::golden_config_path()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_sisom");
    let out = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = sisom(&["score", "--no-such-flag"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(bin).arg("score").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = sisom(&["score", "--override", "model.depth=3"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));

    let out = sisom(&["al-run", "--override", "al.query_size=500"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = sisom(&["score", "--override", "steepness.alpha=[1.0]"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = sisom(&["score", "--model", missing.to_str().unwrap()], &golden(), &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn al_run_writes_checkpoints_curve_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sisom(&["al-run", "--override", "al.cycles=5", "--seed", "11"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for c in 1..=5 {
        assert!(dir.path().join(format!("checkpoints/cycle_{c}.txt")).exists());
    }
    let curve = std::fs::read_to_string(dir.path().join("curves/learning-curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "cycle,labeled_size,strategy,seed,test_accuracy,r_avg,wall_clock_s");
    assert_eq!(lines.count(), 6);

    let m = manifest(dir.path());
    assert_eq!(m["seed"], 11);
    assert!(m["config_hash"].as_str().unwrap().len() == 64);
    for f in m["files"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"config.snapshot"));
    assert!(listed.contains(&"curves/learning-curve.csv"));
}

#[test]
fn ood_eval_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = sisom(&["ood-eval"], &golden(), d.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics/ood-metrics.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let m: Value = serde_json::from_slice(&read(&a)).unwrap();
    assert_eq!(m["scorer"], "sisom");
    assert_eq!(m["baseline"], "energy");
}

#[test]
fn optimize_steepness_audit_has_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = sisom(&["optimize-steepness"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let audit = std::fs::read_to_string(dir.path().join("metrics/steepness-audit.csv")).unwrap();
    assert_eq!(audit.lines().next().unwrap(), "alpha_1,alpha_2,r_avg");
    assert_eq!(audit.lines().count(), 5);

    let out = sisom(&["optimize-steepness", "--override", "steepness.search=null"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_score_with_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    assert_eq!(sisom(&["train"], &golden(), &train_dir).status.code(), Some(0));
    let model = train_dir.join("checkpoints/model.txt");
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(train_dir.join("metrics/train.json")).unwrap()).unwrap();
    assert!(metrics["test_accuracy"].as_f64().unwrap() > 0.9);

    let score_dir = dir.path().join("score");
    let out = sisom(&["score", "--model", model.to_str().unwrap(), "--override", "scorer.mode=sisome"], &golden(), &score_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(score_dir.join("metrics/scores-test.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sample_id,pseudo_class,d_in,d_out,r,r_ood,energy,fused");
    assert_eq!(csv.lines().count(), 401);
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(score_dir.join("metrics/scores.json")).unwrap()).unwrap();
    assert!(side["r_avg"].as_f64().is_some());
    assert_eq!(side["config_hash"], manifest(&score_dir)["config_hash"]);
}

#[test]
fn gen_data_and_subset() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sisom(&["gen-data"], &golden(), dir.path()).status.code(), Some(0));
    let train = Dataset::load_csv(dir.path().join("data/train.csv")).unwrap();
    assert_eq!(train.len(), 400);
    let near = Dataset::load_csv(dir.path().join("data/ood-shifted.csv")).unwrap();
    assert!(near.labels().is_none());

    let sub = dir.path().join("subset");
    assert_eq!(sisom(&["subset"], &golden(), &sub).status.code(), Some(0));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(sub.join("metrics/subset.json")).unwrap()).unwrap();
    assert_eq!(summary["reduced_size"], 40);
    assert_eq!(std::fs::read_to_string(sub.join("metrics/subset.csv")).unwrap().lines().count(), 41);
}
