use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hamshade::flow::StepPolicy;
use hamshade::hamsys::{Builtin, PhasePoint};
use hamshade::shades::breakdown_pseudo_orbit;
use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hamshade-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamshade"))
        .args(args)
        .env_remove("HAMSHADE_OUTPUT_DIR")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn report(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{command}.json"))).unwrap()).unwrap()
}

#[test]
fn describe_writes_envelope() {
    let dir = scratch("describe");
    let out = run(&dir, &["--system", "builtin:harmonic", "describe", "--x", "1,0,0,0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir, "describe");
    assert_eq!(r["format_version"], 1);
    assert_eq!(r["command"], "describe");
    assert_eq!(r["config"]["system"]["builtin"], "harmonic");
    assert!((r["result"]["evaluation"]["energy"].as_f64().unwrap() - 0.625).abs() < 1e-12);
}

#[test]
fn flags_override_config_over_defaults() {
    let dir = scratch("config");
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"system": "builtin:harmonic", "output_dir": "out", "flow": {"T": 1.0, "every": 5}}"#,
    )
    .unwrap();
    let out = run(&dir, &["--config", "cfg.json", "flow", "--T", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.join("out"), "flow");
    let p = &r["config"]["params"];
    assert_eq!(p["T"], 2.0);
    assert_eq!(p["every"], 5);
    assert_eq!(p["method"], "implicit-midpoint");
    assert!(dir.join("out/flow.csv").exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = scratch("env");
    let out = Command::new(env!("CARGO_BIN_EXE_hamshade"))
        .args(["--system", "builtin:pedro", "describe"])
        .env("HAMSHADE_OUTPUT_DIR", dir.join("from-env"))
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("from-env/describe.json").exists());
}

#[test]
fn input_errors_exit_two() {
    let dir = scratch("errors");
    assert_eq!(run(&dir, &["--system", "builtin:nope", "describe"]).status.code(), Some(2));
    assert_eq!(run(&dir, &["describe"]).status.code(), Some(2));
    assert_eq!(run(&dir, &["--system", "builtin:harmonic", "describe", "--x", "1,2,3"]).status.code(), Some(2));
    assert_eq!(run(&dir, &["frobnicate"]).status.code(), Some(2));
    std::fs::write(dir.join("bad.json"), r#"{"flow": {"tee": 1}}"#).unwrap();
    assert_eq!(run(&dir, &["--system", "builtin:harmonic", "--config", "bad.json", "flow"]).status.code(), Some(2));
}

#[test]
fn lost_return_is_numerical_failure() {
    let dir = scratch("orbit");
    // Off the center manifold the saddle carries the guess away for good.
    let out = run(&dir, &["--system", "builtin:saddle-center", "orbit", "--x0", "0,0.5,0.3,0", "--return-budget", "20"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn lyap_pairs_exponents() {
    let dir = scratch("lyap");
    let out = run(&dir, &["--system", "builtin:saddle-center", "lyap", "--T", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&dir, "lyap");
    let l: Vec<f64> = r["result"]["exponents"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((l[0] - 1.0).abs() < 1e-6 && (l[0] + l[1]).abs() < 1e-9);
    assert!(dir.join("lyap.csv").exists());
}

#[test]
fn splitting_verdicts() {
    let dir = scratch("splitting");
    assert_eq!(run(&dir, &["--system", "builtin:saddle-center", "splitting"]).status.code(), Some(0));
    assert_eq!(run(&dir, &["--system", "builtin:harmonic", "splitting"]).status.code(), Some(1));
    assert_eq!(report(&dir, "splitting")["result"]["verdict"], "fails");
}

fn drifting_chain(dir: &Path, on_circle: bool) -> PathBuf {
    let sys = Builtin::Harmonic.system();
    let step = StepPolicy::with_step(1e-2);
    let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let y = if on_circle {
        let angle = 2.0 * (0.375f64 * 0.2).asin();
        hamshade::flow::flow_at(&sys, &q, angle, &StepPolicy::with_step(1e-4)).unwrap()
    } else {
        PhasePoint::from_slice(&[1.0, 0.15, 0.0, 0.0]).unwrap()
    };
    let po = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, 0.05, 4, 2, &step).unwrap();
    let path = dir.join("chain.json");
    std::fs::write(&path, serde_json::to_string(&po.to_file()).unwrap()).unwrap();
    path
}

#[test]
fn drifting_chain_is_not_shadowed() {
    let dir = scratch("shadow");
    let chain = drifting_chain(&dir, false);
    let chain = chain.to_str().unwrap();
    let args = ["--system", "builtin:harmonic", "shadow", "--pseudo", chain, "--eps", "0.05", "--budget", "400"];
    let out = run(&dir, &args);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir, "shadow");
    assert_eq!(r["result"]["success"], false);
    assert!(r["result"]["budget_spent"].as_u64().unwrap() <= 400);
}

#[test]
fn chain_on_one_circle_is_weakly_shadowed() {
    let dir = scratch("weak");
    let chain = drifting_chain(&dir, true);
    let chain = chain.to_str().unwrap();
    let out = run(&dir, &["--system", "builtin:harmonic", "weakshadow", "--pseudo", chain, "--eps", "0.05", "--budget", "400"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn expansive_contrast() {
    let dir = scratch("expansive");
    assert_eq!(run(&dir, &["--system", "builtin:saddle-center", "expansive"]).status.code(), Some(0));
    assert_eq!(run(&dir, &["--system", "builtin:harmonic", "expansive"]).status.code(), Some(1));
}

#[test]
fn suspension_image() {
    let dir = scratch("suspend");
    let out = run(&dir, &["suspend", "--state", "0.1,0.2,0", "--s", "1.5", "--slab-states", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let img: Vec<f64> = report(&dir, "suspend")["result"]["image"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((img[2] - 0.5).abs() < 1e-12);
}

#[test]
fn selftest_subset_and_perturbation() {
    let dir = scratch("selftest");
    let out = run(&dir, &["selftest", "--only", "4,11"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("criterion  4 PASS") && text.contains("criterion 11 PASS"));
    let out = run(&dir, &["selftest", "--only", "4", "--perturb", "4=1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&dir, "selftest")["result"]["passed"], false);
    assert_eq!(run(&dir, &["selftest", "--perturb", "99=2"]).status.code(), Some(2));
}
