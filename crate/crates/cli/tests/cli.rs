use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TABLE1: &str = r#"{"variables": ["x1","x2","x3"], "outcome": "y", "forms": [
    {"name": "A", "items": ["x1"], "fraction": 0.3333333333333333},
    {"name": "B", "items": ["x2"], "fraction": 0.3333333333333333},
    {"name": "C", "items": ["x3"], "fraction": 0.3333333333333334}]}"#;

const TABLE3: &str = r#"{"variables": ["O","C","E","A","N"], "outcome": "y", "forms": [
    {"name": "1", "items": ["O","C"], "fraction": 0.1},
    {"name": "2", "items": ["O","E"], "fraction": 0.1},
    {"name": "3", "items": ["O","A"], "fraction": 0.1},
    {"name": "4", "items": ["O","N"], "fraction": 0.1},
    {"name": "5", "items": ["C","E"], "fraction": 0.1},
    {"name": "6", "items": ["C","A"], "fraction": 0.1},
    {"name": "7", "items": ["C","N"], "fraction": 0.1},
    {"name": "8", "items": ["E","A"], "fraction": 0.1},
    {"name": "9", "items": ["E","N"], "fraction": 0.1},
    {"name": "10", "items": ["A","N"], "fraction": 0.1}]}"#;

const COMPLETE3: &str = r#"{"variables": ["x1","x2","x3"], "outcome": "y", "forms": [
    {"name": "all", "items": ["x1","x2","x3"], "fraction": 1.0}]}"#;

const MODEL3: &str = r#"{"mu_x": [0.5, 0, -1], "sigma_xx": [[1,0.3,0.1],[0.3,1,0.2],[0.1,0.2,1]],
    "beta0": 1, "beta": [0.4, 0, -0.2], "sigma2": 1.5}"#;

const EXPLORE_HEADER: &str = "draw,beta1,beta2,beta3,beta4,beta5,sigma2,\
var_complete0,var_complete1,var_complete2,var_complete3,var_complete4,var_complete5,\
var_ms0,var_ms1,var_ms2,var_ms3,var_ms4,var_ms5,fmi0,fmi1,fmi2,fmi3,fmi4,fmi5,\
n_overall,n_overall_complete,n_uniform,n_uniform_complete,\
n_single1,n_single1_complete,n_single2,n_single2_complete,n_single3,n_single3_complete,\
n_single4,n_single4_complete,n_single5,n_single5_complete,notes";

const SIMULATE_HEADER: &str = "replicate,estimator,b0,b1,b2,b3,b4,b5,se0,se1,se2,se3,se4,se5,\
fmi0,fmi1,fmi2,fmi3,fmi4,fmi5,ci_lo0,ci_lo1,ci_lo2,ci_lo3,ci_lo4,ci_lo5,\
ci_hi0,ci_hi1,ci_hi2,ci_hi3,ci_hi4,ci_hi5";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matrixpower"))
        .args(args)
        .env_remove("MATRIXPOWER_SEED")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = write(dir.path(), "t1.json", TABLE1);
    let t3 = write(dir.path(), "t3.json", TABLE3);
    let bad = write(dir.path(), "bad.json", "{\"variables\": [");

    let out = run(&["validate", &t1]);
    assert_eq!(out.status.code(), Some(2));
    let report = stdout_json(&out);
    assert_eq!(report["singular"], true);
    assert!(String::from_utf8_lossy(&out.stderr).contains("(x1,x2)"));

    let out = run(&["validate", &t3]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["singular"], false);

    assert_eq!(run(&["validate", &bad]).status.code(), Some(1));
    assert_eq!(run(&["validate", "--bigfive"]).status.code(), Some(0));
}

#[test]
fn asymptotics_reports() {
    let out = run(&["asymptotics", "--bigfive", "--n", "1000"]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert_eq!(r["coefficients"][1], "O");
    let se1 = r["se"][1].as_f64().unwrap();
    assert!((se1 - 0.0791).abs() <= 0.0005, "{se1}");
    let fmi1 = r["fmi"][1].as_f64().unwrap();
    assert!((fmi1 - 0.736).abs() <= 0.01);

    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "c.json", COMPLETE3);
    let model = write(dir.path(), "m.json", MODEL3);
    let out = run(&[
        "asymptotics",
        "--design",
        &design,
        "--model",
        &model,
        "--n",
        "200",
    ]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert!(r["fmi"].as_array().unwrap().iter().all(|f| f == 0.0));

    let singular = write(dir.path(), "t1.json", TABLE1);
    let out = run(&["asymptotics", "--design", &singular, "--model", &model]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("SingularInformation"), "{err}");
    assert!(err.contains("(x1,x2)"), "{err}");
}

#[test]
fn sample_size_defaults_and_oracle() {
    let out = run(&[
        "samplesize",
        "--bigfive",
        "--hypothesis",
        "coef",
        "--coefficient",
        "1",
        "--oracle",
    ]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert_eq!(r["alpha"], 0.05);
    assert_eq!(r["power"], 0.8);
    let n = r["result"]["n_total"].as_u64().unwrap();
    assert_eq!(n % 10, 0);
    let z = r["oracle"]["z_test_n"].as_f64().unwrap();
    assert!((n as f64 - z).abs() <= 10.0);
    assert!(r["oracle"]["wald_n_continuous"].is_number());

    let out = run(&[
        "samplesize",
        "--bigfive",
        "--hypothesis",
        "coef",
        "--coefficient",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NoEffect"));

    let out = run(&[
        "samplesize",
        "--bigfive",
        "--hypothesis",
        "overall",
        "--oracle",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        run(&["samplesize", "--bigfive", "--hypothesis", "bogus"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn power_at_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let request = write(
        dir.path(),
        "req.json",
        r#"{"hypothesis": "r2-uniform", "delta": 0.01}"#,
    );
    let out = run(&["power", "--bigfive", "--request", &request, "--n", "5000"]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    let pw = r["power"].as_f64().unwrap();
    assert!(pw > 0.05 && pw < 0.8, "{pw}");
    assert_eq!(r["constraints"], 5);
}

#[test]
fn explore_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let common = ["explore", "--draws", "12", "--seed", "7"];
    let mut args_a = common.to_vec();
    args_a.extend(["--threads", "1", "--out", a.to_str().unwrap()]);
    assert!(run(&args_a).status.success());
    let mut args_b = common.to_vec();
    args_b.extend(["--threads", "3", "--out", b.to_str().unwrap()]);
    assert!(run(&args_b).status.success());

    let csv_a = fs::read_to_string(a.join("explore.csv")).unwrap();
    assert_eq!(csv_a.lines().next().unwrap(), EXPLORE_HEADER);
    assert_eq!(csv_a.lines().count(), 13);
    assert_eq!(csv_a, fs::read_to_string(b.join("explore.csv")).unwrap());

    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "explore");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["r2"], 0.15);
    assert_eq!(manifest["config"]["delta"], 0.01);
    assert_eq!(manifest["config"]["alpha"], 0.05);
    assert_eq!(manifest["config"]["power"], 0.8);
    for key in ["version", "started", "finished", "outputs"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }

    let summary = read_json(&a.join("explore_summary.json"));
    for key in [
        "n_overall",
        "n_uniform",
        "fmi",
        "fmi_slopes",
        "n_single_failures",
    ] {
        assert!(summary.get(key).is_some(), "{key}");
    }

    // A rerun from the manifest reproduces the CSV.
    let manifest_path = a.join("manifest.json");
    let out = run(&[
        "explore",
        "--config",
        manifest_path.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(csv_a, fs::read_to_string(c.join("explore.csv")).unwrap());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_matrixpower"))
        .args([
            "explore",
            "--draws",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("MATRIXPOWER_SEED", "4242")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 4242);
    assert_eq!(manifest["config"]["seed"], 4242);
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "sim.json",
        r#"{"reps": 2, "m_small": 2, "m_large": 3, "pmm_cycles": 2, "seed": 11}"#,
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SIMULATE_HEADER);
    let labels: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(
        &labels[..6],
        ["complete", "em", "mi-mvn-2", "mi-mvn-3", "mi-pmm-2", "mi-pmm-3"]
    );
    let failures = fs::read_to_string(out_dir.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().next().unwrap(), "replicate,method,reason");
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["config"]["n"], 1000);
    assert_eq!(manifest["config"]["seed"], 11);
    let summary = read_json(&out_dir.join("simulate_summary.json"));
    assert_eq!(summary["estimators"].as_array().unwrap().len(), 6);

    let bad = write(dir.path(), "bad.json", r#"{"n": 1005}"#);
    assert_eq!(
        run(&[
            "simulate",
            "--config",
            &bad,
            "--out",
            out_dir.to_str().unwrap()
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["asymptotics"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
