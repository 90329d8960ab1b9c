use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-rda")).args(args).output().expect("binary runs")
}

fn lasso_config(dir: &Path, optimizer: &str, steps: u64) -> String {
    let text = format!(
        r#"{{
  "dataset": {{ "kind": "lasso", "n": 50, "d": 10, "support": 0.2, "noise": 0.1, "seed": 3 }},
  "optimizer": {optimizer},
  "convergence": {{ "steps": {steps}, "alpha_rule": "fixed", "window": [10, {steps}] }}
}}"#
    );
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn converge_succeeds_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lasso_config(dir.path(), r#"{ "kind": "rda", "alpha": 5.0, "lambda": 0.01 }"#, 2000);
    let out = dir.path().join("out");
    let res = run(&["converge", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("convergence.json").is_file());
    assert!(String::from_utf8_lossy(&res.stdout).contains("slope"));
}

#[test]
fn missing_config_is_a_config_error() {
    let res = run(&["converge", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ \"dataset\": ").unwrap();
    assert_eq!(run(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn out_of_range_hyperparameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lasso_config(dir.path(), r#"{ "kind": "rda", "alpha": -1.0, "lambda": 0.01 }"#, 100);
    assert_eq!(run(&["converge", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn divergence_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lasso_config(dir.path(), r#"{ "kind": "sgd", "alpha": 1e-3 }"#, 2000);
    let res = run(&["converge", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn seed_flag_changes_the_data_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = lasso_config(dir.path(), r#"{ "kind": "rda", "alpha": 5.0, "lambda": 0.01 }"#, 500);
    let a = run(&["converge", "--config", &cfg, "--seed", "1"]);
    let b = run(&["converge", "--config", &cfg, "--seed", "1"]);
    let c = run(&["converge", "--config", &cfg, "--seed", "2"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}
