use std::path::{Path, PathBuf};

use dpo_mpc::bundle_file;
use dpo_mpc::config::ROBOT_ARM_TOML;
use tempfile::TempDir;

mod common;
use common::{code, run, s, stderr, stdout, write, SCALAR_TOML};

fn synthesized(dir: &Path) -> (PathBuf, PathBuf) {
    let model = write(dir, "scalar.toml", SCALAR_TOML);
    let bundle = dir.join("bundle.json");
    let o = run(&["synth", "--model", s(&model), "--bundle", s(&bundle)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (model, bundle)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn example_writes_the_shipped_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("arm.toml");
    assert_eq!(code(&run(&["example", "--out", s(&out)])), 0);
    assert_eq!(read(&out), ROBOT_ARM_TOML.as_bytes());
    assert_eq!(stdout(&run(&["example"])), ROBOT_ARM_TOML);
}

#[test]
fn help_and_version_succeed_and_usage_errors_are_input_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 4);
    assert_eq!(code(&run(&["synth", "--model", "m.toml"])), 4);
    assert_eq!(code(&run(&["bench", "--model", "m", "--bundle", "b", "--out", "o", "--plant", "nope"])), 4);
}

#[test]
fn corrupted_model_reports_the_parse_error() {
    let dir = TempDir::new().unwrap();
    let model = write(dir.path(), "bad.toml", &SCALAR_TOML.replace("[weights]", "[weights"));
    let o = run(&["synth", "--model", s(&model), "--bundle", s(&dir.path().join("b.json"))]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("parse"), "{}", stderr(&o));
    assert!(!dir.path().join("b.json").exists());
    let missing = run(&["synth", "--model", "/nonexistent.toml", "--bundle", "b.json"]);
    assert_eq!(code(&missing), 4);
}

#[test]
fn invalid_model_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let model = write(dir.path(), "m.toml", &SCALAR_TOML.replace("[0.4, 0.6]", "[0.4, 0.7]"));
    let o = run(&["synth", "--model", s(&model), "--bundle", s(&dir.path().join("b.json"))]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("invalid model"), "{}", stderr(&o));
}

#[test]
fn infeasible_synthesis_exits_two_naming_the_stage() {
    let dir = TempDir::new().unwrap();
    let text = SCALAR_TOML.replace("b = [[[[1.0]]], [[[0.5]]]]", "b = [[[[0.0]]], [[[0.0]]]]").replace("[[[1.2]]]]", "[[[1.5]]]]");
    let model = write(dir.path(), "m.toml", &text);
    let o = run(&["synth", "--model", s(&model), "--bundle", s(&dir.path().join("b.json"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("terminal-set stage"), "{}", stderr(&o));
}

#[test]
fn synth_writes_a_bundle_and_report_that_check_accepts() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let report = dir.path().join("bundle.report.json");
    assert!(report.exists());
    let doc: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(doc["passed"], true);
    let o = run(&["check", "--model", s(&model), "--bundle", s(&bundle)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    for family in ["terminal-lyapunov", "prediction-invariance", "cost-bound", "containment"] {
        assert!(stdout(&o).contains(family), "{}", stdout(&o));
    }
}

#[test]
fn tolerance_flag_reaches_the_report() {
    let dir = TempDir::new().unwrap();
    let model = write(dir.path(), "scalar.toml", SCALAR_TOML);
    let bundle = dir.path().join("b.json");
    let report = dir.path().join("r.json");
    let o = run(&["synth", "--model", s(&model), "--bundle", s(&bundle), "--report", s(&report), "--tol", "1e-6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(doc["tol"], 1e-6);
    let check_report = dir.path().join("c.json");
    let o = run(&["check", "--model", s(&model), "--bundle", s(&bundle), "--tol", "1e-6", "--report", s(&check_report)]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&check_report), read(&report));
}

#[test]
fn sign_flipped_gain_fails_check_unless_the_tolerance_is_vacuous() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let mut b = bundle_file::read(&bundle).unwrap();
    b.k.iter_mut().flatten().for_each(|k| *k = -&*k);
    let bad = dir.path().join("bad.json");
    bundle_file::write(&bad, &b).unwrap();
    let o = run(&["check", "--model", s(&model), "--bundle", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&run(&["check", "--model", s(&model), "--bundle", s(&bad), "--tol", "inf"])), 0);
}

#[test]
fn mismatched_or_missing_bundle_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (_, bundle) = synthesized(dir.path());
    let arm = write(dir.path(), "arm.toml", ROBOT_ARM_TOML);
    let o = run(&["check", "--model", s(&arm), "--bundle", s(&bundle)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["run", "--model", s(&arm), "--bundle", "/nonexistent.json", "--out", s(&out)])), 4);
}

#[test]
fn bench_with_one_run_equals_run() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["run", "--model", s(&model), "--bundle", s(&bundle), "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["bench", "--model", s(&model), "--bundle", s(&bundle), "--out", s(&b), "--runs", "1"])), 0);
    for f in ["trace.csv", "trace.json", "summary.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn fixed_seed_reproduces_files_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let outs: Vec<PathBuf> = ["one", "two", "other"].iter().map(|n| dir.path().join(n)).collect();
    for (out, seed) in outs.iter().zip(["11", "11", "12"]) {
        let o = run(&["bench", "--model", s(&model), "--bundle", s(&bundle), "--out", s(out), "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("mean OP5 time"));
    }
    for f in ["trace.csv", "trace.json", "summary.json"] {
        assert_eq!(read(&outs[0].join(f)), read(&outs[1].join(f)), "{f}");
    }
    assert_ne!(read(&outs[0].join("trace.csv")), read(&outs[2].join("trace.csv")));
}

#[test]
fn timing_flag_adds_solve_times() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let out = dir.path().join("t");
    assert_eq!(code(&run(&["run", "--model", s(&model), "--bundle", s(&bundle), "--out", s(&out), "--timing"])), 0);
    let csv = String::from_utf8(read(&out.join("trace.csv"))).unwrap();
    assert!(csv.lines().next().unwrap().contains("op5_seconds"));
    assert!(String::from_utf8(read(&out.join("summary.json"))).unwrap().contains("mean_op5_seconds"));
}

#[test]
fn infeasible_start_is_a_runtime_failure_with_its_step() {
    let dir = TempDir::new().unwrap();
    let (_, bundle) = synthesized(dir.path());
    let far = write(dir.path(), "far.toml", &SCALAR_TOML.replace("x0 = [1.5]", "x0 = [50.0]"));
    let out = dir.path().join("far");
    let o = run(&["bench", "--model", s(&far), "--bundle", s(&bundle), "--out", s(&out), "--runs", "2"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("run 0 failed at step 0"), "{}", stdout(&o));
    assert!(out.join("trace.csv").exists());
}

#[test]
fn open_loop_violations_are_reported_but_not_fatal() {
    let dir = TempDir::new().unwrap();
    let (model, bundle) = synthesized(dir.path());
    let out = dir.path().join("ol");
    let o = run(&[
        "bench", "--model", s(&model), "--bundle", s(&bundle), "--out", s(&out), "--controller", "open-loop", "--horizon", "60",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["runs"], 8);
    assert_eq!(summary["horizon"], 60);
    assert!(summary["state_violations"].as_u64().unwrap() > 0);
}
