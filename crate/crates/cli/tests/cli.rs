use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ioc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ioc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn default_problem(dir: &Path) -> PathBuf {
    let out = ioc(&["make-default", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("problem.json")
}

#[test]
fn make_default_records_the_generating_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let v = json(&problem);
    assert_eq!(v["generating_x"], serde_json::json!([0.3, 0.7]));
    let m = json(&dir.path().join("manifest-make-default.json"));
    assert_eq!(m["outputs"], serde_json::json!(["problem.json"]));
    assert_eq!(m["problem_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn lower_solve_meets_the_kkt_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let out_dir = dir.path().join("lower");
    let out = ioc(&["lower", "--problem", s(&problem), "--out", s(&out_dir), "--x", "0.5,0.5"]);
    assert!(out.status.success());
    let v = json(&out_dir.join("lower.json"));
    assert!(v["solution"]["kkt_residual"].as_f64().unwrap() <= 1e-10);
    let csv = fs::read_to_string(out_dir.join("lower.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "omega,y,u,p,lambda");
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn path_then_certify_is_at_least_c_stationary() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let run = dir.path().join("run");
    let out = ioc(&["path", "--problem", s(&problem), "--out", s(&run), "--steps", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["point.json", "multipliers.json", "path.csv", "limit.json", "manifest-path.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let out = ioc(&[
        "certify",
        "--problem",
        s(&problem),
        "--out",
        s(&run),
        "--point",
        s(&run.join("point.json")),
        "--multipliers",
        s(&run.join("multipliers.json")),
        "--tol",
        "1e-4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&run.join("certificate.json"));
    let class = cert["classification"].as_str().unwrap();
    assert!(class == "C" || class == "S", "{class}");
    let rows = fs::read_to_string(run.join("path.csv")).unwrap();
    assert_eq!(rows.lines().count(), 42);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let read = |sub: &str, args: &[&str], file: &str| {
        let out_dir = dir.path().join(sub);
        let mut all = vec![args[0], "--problem", s(&problem), "--out", s(&out_dir)];
        all.extend(&args[1..]);
        assert!(ioc(&all).status.success());
        fs::read(out_dir.join(file)).unwrap()
    };
    let a = read("a", &["path", "--steps", "6"], "point.json");
    let b = read("b", &["path", "--steps", "6"], "point.json");
    assert_eq!(a, b);
    let a = read("c", &["value", "--samples", "5", "--seed", "9"], "value.json");
    let b = read("d", &["value", "--samples", "5", "--seed", "9"], "value.json");
    assert_eq!(a, b);
    let m = json(&dir.path().join("d").join("manifest-value.json"));
    assert_eq!(m["seed"], 9);
}

#[test]
fn degenerate_slice_gives_one_sample_and_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let out_dir = dir.path().join("v");
    let out = ioc(&[
        "value", "--problem", s(&problem), "--out", s(&out_dir), "--from", "0.4,0.6", "--to", "0.4,0.6",
    ]);
    assert!(out.status.success());
    let v = json(&out_dir.join("value.json"));
    assert_eq!(v["samples"].as_array().unwrap().len(), 1);
    let csv = fs::read_to_string(out_dir.join("value.csv")).unwrap();
    assert_eq!(csv, "t,x1,x2,phi,dphi1,dphi2\n");
}

#[test]
fn oracle_compares_a_point_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let run = dir.path().join("run");
    assert!(ioc(&["path", "--problem", s(&problem), "--out", s(&run), "--steps", "40"]).status.success());
    let out = ioc(&[
        "oracle",
        "--problem",
        s(&problem),
        "--out",
        s(&run),
        "--resolution",
        "40",
        "--point",
        s(&run.join("point.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&run.join("oracle.json"));
    assert!(v["comparison"]["gap_to_oracle"].as_f64().unwrap().abs() <= 1e-3);
    let csv = fs::read_to_string(run.join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);
}

#[test]
fn failures_are_reported_as_json_with_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let problem = default_problem(dir.path());
    let o = s(dir.path());

    let out = ioc(&["lower", "--problem", s(&problem), "--out", o, "--x", "0.7,0.7"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "validation");

    let out = ioc(&["lower", "--problem", s(&problem), "--out", o, "--x", "0.5,0.5", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "numerical");

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"grid\": {\"N\": 4}}").unwrap();
    let out = ioc(&["lower", "--problem", s(&broken), "--out", o, "--x", "0.5,0.5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ioc(&["lower", "--problem", s(&dir.path().join("missing.json")), "--out", o, "--x", "1,0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");

    let out = ioc(&["path", "--problem", s(&problem), "--out", o, "--ratio", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ioc(&["lower", "--problem", s(&problem), "--out", o, "--x", "a,b"]);
    assert_eq!(out.status.code(), Some(2));
}
