use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ctscan::synthetic::{write_synthetic_dataset, SyntheticSpec};

fn ctscan(config: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctscan"))
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("pipeline.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn missing_dataset_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "output_dir = \"out\"\n[dataset]\nroot = \"nowhere\"\n");
    for command in ["scan", "train", "all"] {
        let out = ctscan(&cfg, &["--command", command]);
        assert_eq!(
            out.status.code(),
            Some(3),
            "{command}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!dir.path().join("out").exists(), "{command} left outputs behind");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[training]\nlearning_rate = -1.0\n");
    assert_eq!(ctscan(&cfg, &["--command", "scan"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "[training]\nlr = 1.0\n");
    assert_eq!(ctscan(&cfg, &["--command", "scan"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "");
    assert_eq!(ctscan(&cfg, &["--command", "fit"]).status.code(), Some(2));
}

#[test]
fn unreadable_config_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ctscan(&dir.path().join("absent.toml"), &[]).status.code(), Some(5));
}

#[test]
fn compare_prints_the_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run_id = \"cmp\"\n");
    let out_dir = dir.path().join("elsewhere");
    let out = ctscan(&cfg, &["--command", "compare", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("cmp/comparison.txt")).unwrap();
    assert!(table.starts_with("Table III. Comparing Model Performance\n"));
    assert!(table.contains("Proposed Model  | 84%"));
    assert_eq!(table.lines().filter(|l| l.contains('%')).count(), 9);
}

#[test]
fn all_runs_the_smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        train_per_class: 40,
        val_per_class: 10,
        ..Default::default()
    };
    write_synthetic_dataset(&dir.path().join("data"), &spec, &Default::default()).unwrap();
    let cfg = write_config(
        dir.path(),
        "run_id = \"smoke\"\n[backbone]\narchitecture = \"tiny\"\ninput_size = [32, 32]\n[training]\nmax_epochs = 3\n",
    );
    let out = ctscan(&cfg, &["--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("runs/smoke");
    for name in [
        "manifest.json",
        "epochs.csv",
        "batches.csv",
        "run.json",
        "head.ctw",
        "evaluation.json",
        "tables.txt",
        "loss_vs_epoch.png",
        "accuracy_vs_epoch.png",
        "comparison.txt",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let snapshot: serde_json::Value = serde_json::from_slice(&fs::read(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(snapshot["seed"], 9);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train: 40 positive, 40 negative"), "{stdout}");
}
