use std::path::Path;
use std::process::{Command, Output};

fn proxops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxops")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

#[test]
fn malformed_config_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nname = \"x\"\nbogus = 1\n").unwrap();
    let out = proxops(&["simulate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_config_exits_2() {
    let out = proxops(&["simulate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_runs_is_a_config_error() {
    let out = proxops(&["montecarlo", &config("waypoint.toml"), "--runs", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_logs_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("metrics.json");
    let out = proxops(&[
        "simulate",
        &config("waypoint.toml"),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--json-metrics",
        json.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    for f in ["truth.csv", "estimate.csv", "measurements.csv", "phases.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("# schema_version=1\n"), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(metrics["endpoint_error_m"].as_f64().unwrap() < 0.05);
    assert_eq!(metrics["success"], serde_json::Value::Bool(true));
}

#[test]
fn montecarlo_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxops(&[
        "montecarlo",
        &config("waypoint.toml"),
        "--runs",
        "3",
        "--seed",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("montecarlo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn selfcheck_quick_passes() {
    let out = proxops(&["selfcheck", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn p3p_roundtrip_passes() {
    let out = proxops(&["p3p-roundtrip", "--trials", "200"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("failures             0"));
}
