use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasedagg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn random_problem(dir: &Path) {
    ok(
        dir,
        &[
            "gen",
            "random-mdp",
            "--n",
            "10",
            "--actions",
            "3",
            "--branching",
            "3",
            "--alpha",
            "0.9",
            "--seed",
            "1",
            "--out",
            "m.json",
        ],
    );
}

#[test]
fn generation_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    random_problem(d);
    ok(
        d,
        &[
            "gen",
            "random-mdp",
            "--n",
            "10",
            "--actions",
            "3",
            "--branching",
            "3",
            "--alpha",
            "0.9",
            "--seed",
            "1",
            "--out",
            "again.json",
        ],
    );
    assert_eq!(
        fs::read(d.join("m.json")).unwrap(),
        fs::read(d.join("again.json")).unwrap()
    );
    let other = ok(
        d,
        &[
            "gen",
            "random-mdp",
            "--n",
            "10",
            "--actions",
            "3",
            "--branching",
            "3",
            "--alpha",
            "0.9",
            "--seed",
            "2",
        ],
    );
    assert_ne!(
        other.trim().as_bytes(),
        fs::read(d.join("m.json")).unwrap().as_slice()
    );
}

#[test]
fn one_step_gridworld() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "gridworld",
            "--width",
            "2",
            "--height",
            "1",
            "--alpha",
            "0.5",
            "--goal",
            "2",
            "--out",
            "g.json",
        ],
    );
    let sol = json(&ok(
        d,
        &["solve", "exact", "--mdp", "g.json", "--tol", "1e-12"],
    ));
    let j = floats(&sol["J"]);
    assert!((j[0] - 1.0).abs() < 1e-10 && j[1].abs() < 1e-12, "{j:?}");
    assert_eq!(sol["policy"][0], "right");
}

#[test]
fn exact_and_stochastic_aggregate_solves_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    random_problem(d);
    ok(
        d,
        &[
            "build-scheme",
            "--mdp",
            "m.json",
            "--q",
            "3",
            "--s",
            "2",
            "--partition",
            "p.csv",
            "--out",
            "s.json",
        ],
    );
    let csv = fs::read_to_string(d.join("p.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("state,residual,bucket"));
    assert_eq!(csv.lines().count(), 11);

    let exact = json(&ok(
        d,
        &[
            "solve",
            "aggregate",
            "--mdp",
            "m.json",
            "--scheme",
            "s.json",
            "--trace",
            "t.csv",
        ],
    ));
    assert_eq!(exact["status"], "converged");
    assert!(fs::read_to_string(d.join("t.csv")).unwrap().lines().count() > 1);

    let args = [
        "solve",
        "stochastic",
        "--mdp",
        "m.json",
        "--scheme",
        "s.json",
        "--seed",
        "5",
        "--step-rule",
        "harmonic:10",
        "--max-iters",
        "100000",
        "--tol",
        "1e-3",
    ];
    let first = ok(d, &args);
    assert_eq!(first, ok(d, &args), "same seed must reproduce the run");
    let sampled = json(&first);
    let gap = floats(&exact["r"])
        .iter()
        .zip(floats(&sampled["r"]))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 5e-2, "gap {gap}");
}

#[test]
fn improvement_records_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    random_problem(d);
    ok(
        d,
        &[
            "improve", "--mdp", "m.json", "--q", "4", "--out", "rec.json",
        ],
    );
    let rec = json(&fs::read_to_string(d.join("rec.json")).unwrap());
    assert_eq!(rec["status"]["state"], "ok");
    assert!(rec["outputs"]["bound_slack"].as_f64().unwrap() >= -1e-9);
    ok(d, &["improve", "--mdp", "m.json", "--replay", "rec.json"]);

    ok(
        d,
        &[
            "gen",
            "random-mdp",
            "--n",
            "10",
            "--seed",
            "9",
            "--out",
            "other.json",
        ],
    );
    let out = run(
        d,
        &["improve", "--mdp", "other.json", "--replay", "rec.json"],
    );
    assert!(!out.status.success());
}

#[test]
fn rollout_and_adaptive_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    random_problem(d);
    fs::write(
        d.join("mu.json"),
        r#"["u2","u1","u0","u2","u1","u0","u2","u1","u0","u2"]"#,
    )
    .unwrap();
    let roll = json(&ok(
        d,
        &["rollout", "--mdp", "m.json", "--policy", "mu.json"],
    ));
    let (base, better) = (floats(&roll["J_base"]), floats(&roll["J"]));
    assert!(base.iter().zip(&better).all(|(b, r)| r <= &(b + 1e-9)));

    let res = json(&ok(
        d,
        &[
            "eval-adaptive",
            "--mdp",
            "m.json",
            "--policy",
            "mu.json",
            "--q",
            "3",
            "--s",
            "2",
            "--trace",
            "a.csv",
        ],
    ));
    assert_eq!(res["status"], "converged");
    assert!(res["final_error"].as_f64().unwrap() < 1e-6);
    let trace = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("k,s,q_effective,residual,error"));
}

#[test]
fn verify_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "verify",
            "--seed",
            "0",
            "--threads",
            "2",
            "--out",
            "report.txt",
        ],
    );
    let report = fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report
        .lines()
        .any(|l| l.starts_with("PASS aggregate-contraction")));
    assert!(!report.lines().any(|l| l.starts_with("FAIL")));

    let out = run(d, &["verify", "--seed", "0", "--fault-alpha", "1.01"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL aggregate-contraction"));
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["solve", "exact", "--mdp", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    random_problem(d);
    let out = run(
        d,
        &[
            "build-scheme",
            "--mdp",
            "m.json",
            "--q",
            "4",
            "--sample-count",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
