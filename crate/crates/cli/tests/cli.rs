use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mvperiodic(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvperiodic"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("MVP_WORKERS", w),
        None => cmd.env_remove("MVP_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn numerics(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v["runtime_s"] = Value::Null;
    v
}

const PATHWISE: &str = r#"
[scenario]
name = "mv_ou_periodic"

[grid]
dt = 0.01
periods = 3

[experiment]
kind = "pathwise_periodicity"
N = 64
seed = 7

[output]
dir = "out"
svg = true
"#;

const ORACLE: &str = r#"
[scenario]
name = "mv_ou_periodic"

[grid]
dt = 0.01
periods = 4

[experiment]
kind = "oracle_mean"
N = 256
replicas = 6
phase_points = 4
seed = 11
"#;

#[test]
fn pathwise_run_passes_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PATHWISE);
    let out = mvperiodic(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let dir = tmp.path().join("out");
    for name in ["report.json", "manifest.json", "discrepancy.csv", "discrepancy.svg"] {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    let report = numerics(&dir);
    assert_eq!(report["verdict"], "PASS");
    let csv = fs::read_to_string(dir.join("discrepancy.csv")).unwrap();
    assert!(csv.starts_with("t,max_discrepancy,max_norm\n"));
}

#[test]
fn manifest_rerun_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PATHWISE);
    assert_eq!(mvperiodic(&["run", &cfg], None).status.code(), Some(0));
    let first = tmp.path().join("out");
    let manifest = first.join("manifest.json").to_string_lossy().into_owned();
    let second = tmp.path().join("again");
    let out = mvperiodic(&["run", &manifest, "--out", &second.to_string_lossy()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(numerics(&first), numerics(&second));
    assert_eq!(fs::read(first.join("discrepancy.csv")).unwrap(), fs::read(second.join("discrepancy.csv")).unwrap());
    assert_eq!(fs::read(first.join("manifest.json")).unwrap(), fs::read(second.join("manifest.json")).unwrap());
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ORACLE);
    let mut dirs = Vec::new();
    for w in ["1", "8"] {
        let dir = tmp.path().join(format!("w{w}"));
        let out = mvperiodic(&["run", &cfg, "--out", &dir.to_string_lossy()], Some(w));
        assert!(matches!(out.status.code(), Some(0..=2)), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(dir);
    }
    assert_eq!(numerics(&dirs[0]), numerics(&dirs[1]));
    assert_eq!(
        fs::read(dirs[0].join("ensemble_mean.csv")).unwrap(),
        fs::read(dirs[1].join("ensemble_mean.csv")).unwrap()
    );
}

#[test]
fn non_contractive_pullback_exits_with_structured_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[scenario]
name = "piecewise_k1"
params = { kappa = 0.3 }

[grid]
dt = 0.01
periods = 4

[experiment]
kind = "pullback"
N = 32
horizons = [1, 2]
seed = 1
"#,
    );
    let out = mvperiodic(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "NotContractive");
}

#[test]
fn misaligned_grid_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PATHWISE.replace("dt = 0.01", "dt = 0.003"));
    let out = mvperiodic(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "ValidationError");
    assert!(err["message"].as_str().unwrap().contains("grid not period-aligned"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_key_reports_name_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PATHWISE.replace("seed = 7", "seed = 7\nfoo = 3"));
    let out = mvperiodic(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "ParseError");
    assert!(err["message"].as_str().unwrap().contains("foo"));
    assert_eq!(err["line"], 13);
}

#[test]
fn list_scenarios_names_all_builtins() {
    let out = mvperiodic(&["list-scenarios"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["mv_ou_periodic", "piecewise_k1", "double_well_partial", "truncated_ou"] {
        assert!(text.contains(name));
    }
}

#[test]
fn verify_all_writes_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("suite");
    let out = mvperiodic(&["verify-all", &dir.to_string_lossy(), "--only", "3,9"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_passed"], true);
    assert!(dir.join("criterion_03.json").is_file());
}
