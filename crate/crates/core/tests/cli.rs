use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn example() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/sec6.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsi-mdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn table_lookup(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| {
            let (k, v) = l.split_once(char::is_whitespace)?;
            (k == key).then(|| v.trim().to_string())
        })
        .unwrap_or_else(|| panic!("{key} missing from table"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_reports_dimensions() {
    let ex = example();
    let v = json(&run(&["validate", ex.to_str().unwrap()]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["model"]["n_obs"], 2);
    assert_eq!(v["model"]["n_unobs"], 2);
    assert_eq!(v["model"]["n_actions"], 2);
    assert_eq!(v["model"]["factorized"], true);
}

#[test]
fn invalid_model_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: Value = serde_json::from_str(&fs::read_to_string(example()).unwrap()).unwrap();
    model["factored"]["p_obs"][0][0] = serde_json::json!([0.5, 0.4]);
    let bad = write(dir.path(), "bad.json", &model.to_string());
    let out = run(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["validate", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn usage_error_exits_three() {
    assert_eq!(run(&["solve"]).status.code(), Some(3));
    let ex = example();
    assert_eq!(
        run(&["solve", ex.to_str().unwrap(), "--method", "bogus"]).status.code(),
        Some(3)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn table_and_json_carry_the_same_numbers() {
    let ex = example();
    let ex = ex.to_str().unwrap();
    for method in ["full", "virtual", "constrained"] {
        let j = json(&run(&["solve", ex, "--method", method]));
        let t = run(&["--format", "table", "solve", ex, "--method", method]);
        assert!(t.status.success());
        let text = String::from_utf8(t.stdout).unwrap();
        for key in ["dual_lp", "method"] {
            if let Some(x) = j.get(key) {
                assert_eq!(table_lookup(&text, key), x.to_string(), "{method} {key}");
            }
        }
    }
}

#[test]
fn out_flag_writes_file_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("full.json");
    let ex = example();
    let out = run(&[
        "--out",
        target.to_str().unwrap(),
        "solve",
        ex.to_str().unwrap(),
        "--method",
        "full",
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(&target).unwrap()).unwrap();
    assert!((v["value"].as_f64().unwrap() - 1.181248).abs() < 1e-5);
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1, "leftover files: {names:?}");
}

#[test]
fn failed_run_leaves_no_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out.json");
    let missing = dir.path().join("missing.json");
    let out = run(&["--out", target.to_str().unwrap(), "validate", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn simulate_with_solved_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let ex = example();
    let ex = ex.to_str().unwrap();
    let solved = dir.path().join("virtual.json");
    assert!(run(&["--out", solved.to_str().unwrap(), "solve", ex, "--method", "virtual"])
        .status
        .success());
    let args = ["simulate", ex, "--episodes", "2000", "--seed", "5"];
    let from_file = json(&run(&[&args[..], &["--policy", solved.to_str().unwrap()]].concat()));
    let by_name = json(&run(&[&args[..], &["--policy", "virtual"]].concat()));
    assert_eq!(from_file["result"], by_name["result"]);
    let mean = from_file["result"]["mean"].as_f64().unwrap();
    let se = from_file["result"]["std_error"].as_f64().unwrap();
    assert!((mean - 113.0 / 85.0).abs() <= 3.0 * se + 1e-5);
}

#[test]
fn simulate_with_bare_policy_map_and_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let ex = example();
    let ex = ex.to_str().unwrap();
    let map = write(dir.path(), "map.json", r#"{"0": 0, "1": 0}"#);
    let v = json(&run(&["simulate", ex, "--policy", &map, "--episodes", "4000"]));
    let (mean, se) = (v["result"]["mean"].as_f64().unwrap(), v["result"]["std_error"].as_f64().unwrap());
    assert!((mean - 159.0 / 85.0).abs() <= 3.0 * se + 1e-5);

    let seq = write(dir.path(), "seq.json", r#"{"sequence": [1]}"#);
    let s = json(&run(&["simulate", ex, "--policy", &seq, "--episodes", "4000"]));
    let (mean, se) = (s["result"]["mean"].as_f64().unwrap(), s["result"]["std_error"].as_f64().unwrap());
    assert!((mean - 113.0 / 85.0).abs() <= 3.0 * se + 1e-5);
}

#[test]
fn simulate_belief_dp_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ex = example();
    let ex = ex.to_str().unwrap();
    let report = dir.path().join("dp.json");
    assert!(run(&["--out", report.to_str().unwrap(), "solve", ex, "--method", "belief-dp"])
        .status
        .success());
    let csv = dir.path().join("totals.csv");
    let v = json(&run(&[
        "simulate",
        ex,
        "--policy",
        report.to_str().unwrap(),
        "--episodes",
        "500",
        "--csv",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(v["config"]["horizon"], 16);
    let rows = fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 501);
}

#[test]
fn bounds_output_for_worked_example() {
    let ex = example();
    let v = json(&run(&["bounds", ex.to_str().unwrap()]));
    assert!((v["gaps"]["c_bar"].as_f64().unwrap() - 1.8).abs() < 1e-12);
    assert!((v["full_info_gap"]["Ok"]["bound"].as_f64().unwrap() - 3.6).abs() < 1e-12);
    assert_eq!(v["full_info_gap"]["Ok"]["holds"], true);
    assert_eq!(v["belief_gap"]["Ok"]["holds"], true);
}

#[test]
fn compare_is_reproducible() {
    let ex = example();
    let args = ["compare", ex.to_str().unwrap(), "--episodes", "1000"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["internally_consistent"], true);
}
