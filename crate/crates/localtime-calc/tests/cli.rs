//! End-to-end tests of the `localtime-calc run` binary.

use std::path::Path;
use std::process::{Command, Output};

use localtime_calc::report::CSV_HEADER;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_localtime-calc")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_cli(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(binary())
        .arg("run")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

const COVARIATION: &str = r#"{
  "model": {"kind": "bm"},
  "simulation": {"n": 12, "n_paths": 1000, "seed": 7},
  "grid": {"x_min": -4.0, "x_max": 4.0, "dx": 0.05, "epsilon": 0.05},
  "experiment": "covariation"
}"#;

#[test]
fn covariation_run_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COVARIATION);
    let out = dir.path().join("report.csv");
    let result = run_cli(&cfg, &out, &[]);
    assert!(result.status.success(), "{result:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.trim_end().lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "covariation");
    let reference: f64 = fields[2].parse().unwrap();
    let rel_error: f64 = fields[4].parse().unwrap();
    assert!((reference - 1.0).abs() < 0.01, "reference = {reference}");
    assert!(rel_error < 0.03, "rel_error = {rel_error}");
}

#[test]
fn reruns_are_byte_identical_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COVARIATION);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    assert!(run_cli(&cfg, &out_a, &[]).status.success());
    assert!(run_cli(&cfg, &out_b, &["--threads", "2"]).status.success());
    let strip = |p: &Path| -> String {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&out_a), strip(&out_b));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &COVARIATION.replace("\"model\"", "\"modell\""));
    let out = dir.path().join("report.csv");
    let result = run_cli(&cfg, &out, &[]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("modell"), "stderr: {stderr}");
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &COVARIATION.replace("\"covariation\"", "\"theorem99\""),
    );
    let result = run_cli(&cfg, &dir.path().join("r.csv"), &[]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");
}

#[test]
fn sweep_emits_one_row_per_value_with_shrinking_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = COVARIATION.replace(
        "\"experiment\": \"covariation\"",
        "\"experiment\": \"covariation\", \"sweep\": {\"n\": [8, 10, 12]}",
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("report.csv");
    assert!(run_cli(&cfg, &out, &[]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.trim_end().lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let errs: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(errs[2] <= errs[0], "errs = {errs:?}");
}

#[test]
fn dump_paths_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let body = COVARIATION.replace("\"n_paths\": 1000", "\"n_paths\": 5");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("report.csv");
    assert!(run_cli(&cfg, &out, &["--dump-paths"]).status.success());
    let dumped = std::fs::read_to_string(dir.path().join("report.paths.csv")).unwrap();
    assert!(dumped.starts_with("path_index,t,x\n"));
    // 5 paths at 257 decimated points each, plus the header
    assert_eq!(dumped.trim_end().lines().count(), 1 + 5 * 257);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COVARIATION);
    let out = dir.path().join("no-such-dir").join("report.csv");
    let result = run_cli(&cfg, &out, &[]);
    assert_eq!(result.status.code(), Some(3), "{result:?}");
}

#[test]
fn resource_cap_refusal_mentions_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COVARIATION);
    let out = dir.path().join("report.csv");
    let result = Command::new(binary())
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("LOCALTIME_CALC_CAP", "1000")
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3), "{result:?}");
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("cap"), "stderr: {stderr}");
}

#[test]
fn config_round_trip_for_shipped_examples() {
    use localtime_calc::config::ExperimentConfig;
    for body in [
        COVARIATION.to_string(),
        COVARIATION.replace("\"covariation\"", "\"tanaka\""),
        COVARIATION.replace(
            r#"{"kind": "bm"}"#,
            r#"{"kind": "ou", "theta": 1.0, "sigma": 1.0}"#,
        ),
    ] {
        let cfg = ExperimentConfig::from_json(&body).unwrap();
        let emitted = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&emitted).unwrap(), cfg);
    }
}
