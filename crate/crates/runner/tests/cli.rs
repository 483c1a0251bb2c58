//! The `approxfl` binary: verbs, exit codes and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use approxfl::experiment::DEVICE_COLUMNS;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_approxfl"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const SHORT_RUN: &str = r#"{
    "version": 1,
    "fleet": "C2",
    "partition": {"devices": 16, "scheme": {"kind": "resource_correlated"}},
    "training": {"rounds": 2, "eval_every": 1},
    "seeds": [4]
}"#;

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            approxfl::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn short_run_writes_one_row_per_device_and_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_RUN);
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("top-1"));

    let rounds = fs::read_to_string(out.join("rounds_seed4.csv")).unwrap();
    let mut lines = rounds.lines();
    assert_eq!(lines.next().unwrap(), DEVICE_COLUMNS);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 16);
    let cols = DEVICE_COLUMNS.split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == cols));

    let eval = fs::read_to_string(out.join("eval_seed4.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 2);
    assert!(eval.lines().next().unwrap().contains("g3_accuracy"));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["rounds"], 2);
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 1);
    let reduction = summary["minibatch_energy"][1]["reduction_vs_c1"].as_f64().unwrap();
    assert!(reduction > 2.0, "C2 group saves energy per mini-batch: {reduction}");
    assert!(out.join("accuracy_energy.csv").exists());
}

#[test]
fn identical_seeds_give_byte_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_RUN);
    let outputs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .zip(["1", "3"])
        .map(|(name, threads)| {
            let out = dir.path().join(name);
            let o = run(&[
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
            out
        })
        .collect();
    for file in ["rounds_seed4.csv", "eval_seed4.csv", "accuracy_energy.csv", "summary.json"] {
        let a = fs::read(outputs[0].join(file)).unwrap();
        let b = fs::read(outputs[1].join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
}

#[test]
fn seed_flag_overrides_the_configured_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SHORT_RUN.replace("\"rounds\": 2", "\"rounds\": 1"));
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("rounds_seed9.csv").exists());
    assert!(!out.join("rounds_seed4.csv").exists());
}

#[test]
fn configuration_errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version": 1, "training": {"roundz": 3}}"#);
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("roundz"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), r#"{"version": 1, "fleet": "C9"}"#);
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("C9"));

    let cfg = write_config(dir.path(), r#"{"version": 1}"#);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "no output directory");
}

#[test]
fn runtime_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("train.bin");
    fs::write(&bad, b"not a dataset").unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"version": 1, "dataset": {"files": {"train": "train.bin", "test": "train.bin"}}}"#,
    );
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("train.bin"));
}

#[test]
fn breakdown_prints_every_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["breakdown", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["C1", "C2", "C3", "C4", "C5", "S1", "S2", "S3", "S4"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing:\n{text}");
    }
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("breakdown.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 9);
}

#[test]
fn multiplier_tables() {
    let o = run(&["characterize-multiplier", "--bits", "1,3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 3);
    let o = run(&["calibrate-mbm", "--bits", "3"]);
    assert!(o.status.success());
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[1], fields[2], "calibration reproduces the frozen constant: {line}");
}

#[test]
fn partition_preview_lists_devices() {
    let cfg = configs_dir().join("rc_c2.json");
    let o = run(&["partition-preview", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 16);
}

#[test]
fn generated_csv_dataset_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["gen-dataset", "--out", data.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write_config(
        dir.path(),
        r#"{"version": 1,
            "dataset": {"files": {"train": "data/desk_train.csv", "test": "data/desk_test.csv", "format": "csv"}},
            "partition": {"devices": 4, "scheme": {"kind": "iid"}},
            "training": {"rounds": 1, "clients_per_round": 4},
            "seeds": [1]}"#,
    );
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
