//! End-to-end tests of the `padic-prep` binary: exit-code contract, report
//! envelope, stderr summary behaviour and bytewise determinism.

use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_padic-prep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn eval_reports_value_and_config() {
    let out = run(&["eval", "-f", "t^2 + t", "-t", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["command"], "eval");
    assert_eq!(v["config"]["p"], 3);
    assert_eq!(v["config"]["precision"], 12);
    assert_eq!(v["config"]["v_min"], -3);
    assert_eq!(v["config"]["v_max"], 3);
    assert_eq!(v["config"]["unit_level"], 4);
    assert!(v["version"].is_string());
    assert!(!out.stderr.is_empty(), "human summary on stderr by default");
}

#[test]
fn quiet_suppresses_stderr() {
    let out = run(&["eval", "-f", "t^2 + t", "-t", "4", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stderr.is_empty());
}

#[test]
fn jacobian_failure_exits_one_with_witness() {
    // x² on Z₃ is not injective: the pinned counterexample is (1, -1).
    let out = run(&["jacobian", "-f", "t^2", "--ball", "0:0"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    let cex = &v["result"]["first_counterexample"];
    assert_eq!(cex["x"], "1");
    assert_eq!(cex["y"], "-1");
}

#[test]
fn jacobian_success_exits_zero() {
    let out = run(&["jacobian", "-f", "t^2", "--ball", "1:1", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["verdict"], true);
}

#[test]
fn fixed_point_finds_minus_one_half() {
    let out = run(&["fixed-point", "-f", "3*t + 1", "--ball", "0:0", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["point"], "-1/2");
}

#[test]
fn prepare_succeeds_and_is_deterministic() {
    let args = ["prepare", "-f", "t^2 + t", "--quiet"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout, "byte-identical reports across runs");
    let v = stdout_json(&a);
    assert_eq!(v["config"]["jobs"], 1);
    assert!(v["result"]["cells"].as_array().map_or(false, |c| !c.is_empty()));
}

#[test]
fn lipschitz_single_part_on_z3() {
    let out = run(&["lipschitz", "-f", "t^2 on {ord(t) >= 0}", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["result"]["merged_verdict"], true);
    assert_eq!(v["result"]["parts"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_two() {
    // Unparsable function text.
    let out = run(&["eval", "-f", "t ++ 1", "-t", "0"]);
    assert_eq!(out.status.code(), Some(2));
    // Violated precondition: Lipschitz budget too small for the domain.
    let out = run(&["lipschitz", "-f", "t^2 on {ord(t) in 1Z}", "--quiet"]);
    assert_eq!(out.status.code(), Some(2));
    // Bad flag value.
    let out = run(&["prepare", "-f", "t", "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn jobs_env_fallback_is_recorded() {
    let out = Command::new(env!("CARGO_BIN_EXE_padic-prep"))
        .args(["prepare", "-f", "t^2 + t", "--quiet"])
        .env("PADIC_PREP_JOBS", "2")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["config"]["jobs"], 2);
}

#[test]
fn verify_round_trips_a_prepare_report() {
    let out = run(&["prepare", "-f", "t^2 - 1", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let dir = std::env::temp_dir().join("padic-prep-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let ver = run(&["verify", "-f", "t^2 - 1", "--report", path.to_str().unwrap(), "--quiet"]);
    assert_eq!(ver.status.code(), Some(0));
}
