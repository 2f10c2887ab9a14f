use std::path::Path;
use std::process::{Command, Output};

use fumi::harness::SeedResult;

fn fumi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fumi"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn error_kind(out: &Output) -> String {
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    err["error"].as_str().unwrap().to_owned()
}

/// Small validation set so the smoke runs stay quick.
fn write_config(dir: &Path, extra: serde_json::Value) -> String {
    let mut config = serde_json::json!({"val_tasks": 10, "val_every": 10});
    config.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn train_writes_checkpoint_and_json_lines_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let out = fumi(
        &["train", "--config", &cfg, "--algo", "fumi", "--shots", "1", "--ways", "5", "--data", "synthetic", "--seed", "0", "--episodes", "20", "--out", "run"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run/seed-0");
    assert!(run.join("checkpoint.bin").is_file());
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in ["episode", "train_loss", "val_loss", "val_accuracy"] {
        assert!(lines[0][key].is_number(), "{key}");
    }
    assert_eq!(lines[1]["episode"], 20);
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["seeds"], serde_json::json!([0]));
    assert_eq!(saved["episodes"], 20);
}

#[test]
fn zero_shot_rule_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fumi(&["train", "--algo", "am3-zero", "--shots", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "ConfigError");
    let out = fumi(&["train", "--algo", "maml", "--shots", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fumi(&["train", "--grad-mode", "third"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fumi(&["train", "--algo", "reptile"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_scores_the_default_protocol_and_checks_the_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"algorithm": "protonet"}));
    let out = fumi(&["train", "--config", &cfg, "--seed", "3", "--episodes", "10", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = fumi(&["eval", "--checkpoint", "run/seed-3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: SeedResult =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/seed-3/eval.json")).unwrap()).unwrap();
    assert_eq!(result.n_tasks, 1000);
    assert_eq!(result.n_predictions, 1000 * 5 * 20);
    assert_eq!(result.per_task.len(), 1000);
    assert_eq!(result.seed, 3);

    let out = fumi(&["eval", "--checkpoint", "run/seed-3", "--episodes", "7", "--query-per-class", "4"], dir.path());
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_tasks"], 7);

    let out = fumi(&["eval", "--checkpoint", "run/seed-3", "--algo", "fumi", "--episodes", "5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "AlgorithmMismatch");

    let ckpt = dir.path().join("run/seed-3/checkpoint.bin");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&ckpt, bytes).unwrap();
    let out = fumi(&["eval", "--checkpoint", "run/seed-3", "--episodes", "5"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "ChecksumMismatch");
}

#[test]
fn untrained_symmetric_model_scores_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"init": "zero", "val_tasks": 0}));
    let out = fumi(&["train", "--config", &cfg, "--algo", "maml", "--episodes", "0", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = fumi(&["eval", "--checkpoint", "run/seed-0", "--episodes", "10"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = summary["mean_accuracy"].as_f64().unwrap();
    assert!((acc - 0.2).abs() < 0.02, "{acc}");
}

#[test]
fn report_tabulates_runs_and_lists_missing_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"algorithm": "am3-zero", "shots": 0, "eval_tasks": 50}));
    let out = fumi(
        &["train", "--config", &cfg, "--seed", "0", "--seed", "1", "--episodes", "10", "--eval", "--out", "runs"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = fumi(&["report", "runs", "--out", "table"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("table/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "algo,shots,mean,std,n_seeds");
    assert!(rows[1].starts_with("am3-zero,0,") && rows[1].ends_with(",2"), "{}", rows[1]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("algorithm"));
    assert!(stdout.contains("0-shot"));

    std::fs::remove_file(dir.path().join("runs/seed-1/eval.json")).unwrap();
    let out = fumi(&["report", "runs"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingRuns");
    assert!(err["missing"][0].as_str().unwrap().contains("am3-zero 0-shot seed 1"));
}

#[test]
fn trains_from_an_mmfs_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = fumi::episodes::synthetic_dataset(&fumi::episodes::SyntheticConfig {
        n_classes: 30,
        images_per_class: 30,
        split_sizes: None,
        ..Default::default()
    })
    .unwrap();
    fumi::episodes::write_dataset(&dir.path().join("mmfs"), data.image_dim, data.text_dim, &data.classes, None).unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"algorithm": "am3", "shots": 1, "eval_tasks": 50}));
    let out = fumi(&["train", "--config", &cfg, "--data", "mmfs", "--episodes", "10", "--eval", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = fumi(&["train", "--config", &cfg, "--data", "nowhere", "--episodes", "10"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
