use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn kwlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwlab")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn constant_config(dir: &Path) -> String {
    let out = dir.join("run");
    write_config(
        dir,
        &format!(
            r#"{{"grid": {{"N": 64, "w": "zero"}}, "weight": {{"fixture": "constant"}},
               "output_dir": {:?}, "init": {{"random": {{"kmax": 3, "amplitude": 0.2}}}},
               "upper_bound": {{"eps_list": [0.1, 0.08]}}}}"#,
            out.to_str().unwrap()
        ),
    )
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_then_plot_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = constant_config(tmp.path());
    let out = kwlab(&["pipeline", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&tmp.path().join("run/summary.json"));
    assert_eq!(summary["djlw_satisfied"], true);
    assert_eq!(summary["converged"], true);
    assert!(summary["residual"].as_f64().unwrap() < 1e-8);

    let out = kwlab(&["plot-data", tmp.path().join("run").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);
}

#[test]
fn missing_weight_fails_before_compute() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("never");
    let cfg = write_config(
        tmp.path(),
        &format!(r#"{{"grid": {{"N": 64, "w": "zero"}}, "output_dir": {:?}}}"#, out_dir.to_str().unwrap()),
    );
    let out = kwlab(&["pipeline", "-c", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("weight"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_fixture_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"grid": {"N": 64, "w": "zero"}, "weight": {"fixture": "no-such"}, "output_dir": "x"}"#,
    );
    let out = kwlab(&["thresholds", "-c", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such"));
}

#[test]
fn seed_override_changes_init_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = constant_config(tmp.path());
    let run = |seed: &str, sub: &str| {
        let dir = tmp.path().join(sub);
        let out = kwlab(&["solve", "-c", &cfg, "--eps", "2.0", "--seed", seed, "-o", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.join("solve.json")).unwrap()
    };
    let a = run("3", "a");
    let b = run("3", "b");
    let c = run("4", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn thresholds_and_green_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = constant_config(tmp.path());
    assert!(kwlab(&["thresholds", "-c", &cfg]).status.success());
    let report = read_json(&tmp.path().join("run/thresholds.json"));
    let djlw = report["djlw_value"].as_f64().unwrap();
    assert!((djlw - 8.0 * std::f64::consts::PI).abs() < 1e-9);

    assert!(kwlab(&["green", "-c", &cfg, "--at", "0.25,0.5"]).status.success());
    let green = read_json(&tmp.path().join("run/green.json"));
    assert_eq!(green["pole"]["ix"], 16);
    assert_eq!(green["pole"]["iy"], 32);
    assert!(tmp.path().join("run/green.bin").exists());
}

#[test]
fn continue_writes_stage_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = constant_config(tmp.path());
    let dir = tmp.path().join("cont");
    let out = kwlab(&["continue", "-c", &cfg, "-o", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(dir.join("stages/stage_11.json").exists());
    assert!(dir.join("stages/stage_11.bin").exists());

    let field = dir.join("stages/stage_11.bin");
    let out = kwlab(&["analyze", "-c", &cfg, "-o", dir.to_str().unwrap(), "--field", field.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("analysis.json").exists());
}

#[test]
fn plot_data_without_run_fails() {
    let tmp = TempDir::new().unwrap();
    let out = kwlab(&["plot-data", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn bad_point_argument() {
    let tmp = TempDir::new().unwrap();
    let cfg = constant_config(tmp.path());
    let out = kwlab(&["green", "-c", &cfg, "--at", "0.5"]);
    assert!(!out.status.success());
}
