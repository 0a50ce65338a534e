use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn propmech(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propmech"))
        .args(args)
        .current_dir(dir)
        .env("MECH_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

const CANONICAL: &str = r#"{
  "agents": [
    {"valuation": {"family": "log_shift", "a": 1.0, "b": 1.0}},
    {"valuation": {"family": "log_shift", "a": 1.0, "b": 1.0}}
  ],
  "constraints": [{"coeffs": {"0": 1.0, "1": 1.0}, "cap": 1.0}],
  "equality_groups": [[0], [1]],
  "d": [0.01, 0.01],
  "D": 10.0,
  "eta": 1.0
}"#;

fn canonical_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("c.json"), CANONICAL).unwrap();
    dir
}

#[test]
fn solve_prints_the_canonical_optimum() {
    let dir = canonical_dir();
    let out = propmech(&["solve", "c.json", "--tol", "1e-8"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    for x in sol["x_star"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() - 0.5).abs() < 1e-6);
    }
    assert!((sol["lambda_star"][0].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-6);
    assert!(sol["iterations"].is_u64());
}

#[test]
fn simulate_writes_report_and_trace() {
    let dir = canonical_dir();
    let out = propmech(
        &["simulate", "c.json", "--variant", "sbb-ne", "--trace", "t.csv", "-o", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path(), "r.json");
    assert_eq!(report["variant"], "sbb-ne");
    assert_eq!(report["passed"], true);
    assert!(report["dynamics"]["converged"].as_bool().unwrap());
    assert!(report["ne_report"]["passed"].as_bool().unwrap());
    let rounds = report["dynamics"]["rounds"].as_u64().unwrap() as usize;
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "round,max_change,x0,x1,budget_imbalance,max_violation");
    assert_eq!(lines.count(), rounds);
}

#[test]
fn simulate_fails_when_rounds_run_out() {
    let dir = canonical_dir();
    let out = propmech(&["simulate", "c.json", "--max-rounds", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}

#[test]
fn simulate_accepts_a_profile_file_as_start() {
    let dir = canonical_dir();
    let profile = r#"{"y": [0.5, 0.5], "prices": [[0.6666666666666666], [0.6666666666666666]]}"#;
    std::fs::write(dir.path().join("p.json"), profile).unwrap();
    let out = propmech(&["simulate", "c.json", "--init", "p.json", "-o", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(dir.path(), "r.json")["dynamics"]["rounds"].as_u64().unwrap() <= 2);
}

#[test]
fn verify_separates_equilibria_from_disagreement() {
    let dir = canonical_dir();
    let good = r#"{"y": [0.5, 0.5], "prices": [[0.6666666666666666], [0.6666666666666666]]}"#;
    let bad = r#"{"y": [0.5, 0.5], "prices": [[0.9], [0.6666666666666666]]}"#;
    std::fs::write(dir.path().join("good.json"), good).unwrap();
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    let args = ["--eps", "1e-6", "--deviations", "50", "--seed", "4"];
    let ok = propmech(&[&["verify", "c.json", "good.json"][..], &args].concat(), dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let fail = propmech(&[&["verify", "c.json", "bad.json", "-o", "v.json"][..], &args].concat(), dir.path());
    assert_eq!(fail.status.code(), Some(1));
    let report = json(dir.path(), "v.json");
    let gain = report["agents"][0]["max_gain"].as_f64().unwrap();
    let gap = 0.9 - 2.0 / 3.0;
    assert!(gain >= gap * gap * (1.0 - 1e-9));
}

#[test]
fn gen_is_deterministic_and_feeds_solve() {
    let dir = TempDir::new().unwrap();
    let args = ["gen", "local-public-goods", "--groups", "2", "--seed", "5"];
    for name in ["a.json", "b.json"] {
        let out = propmech(&[&args[..], &["-o", name]].concat(), dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert!(!json(dir.path(), "a.json")["equality_groups"].as_array().unwrap().is_empty());
    assert_eq!(propmech(&["solve", "a.json"], dir.path()).status.code(), Some(0));

    let out = propmech(&["gen", "public-good", "--agents", "3", "--cap", "2.5", "-o", "pg.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(dir.path(), "pg.json")["equality_groups"][0].as_array().unwrap().len(), 3);
}

#[test]
fn gen_unit_unicast_is_the_canonical_pair() {
    let dir = TempDir::new().unwrap();
    let out = propmech(
        &["gen", "unicast", "--agents", "2", "--links", "1", "--unit", "-o", "u.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let solved = propmech(&["solve", "u.json"], dir.path());
    let sol: Value = serde_json::from_slice(&solved.stdout).unwrap();
    assert!((sol["x_star"][0].as_f64().unwrap() - 0.5).abs() < 1e-6);
}

#[test]
fn prop_reports_pass_and_rejects_unknown_suites() {
    let dir = TempDir::new().unwrap();
    let out = propmech(&["prop", "feasibility", "--samples", "500", "--seed", "9"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["samples"], 500);
    assert!(report["max_violation"].as_f64().unwrap() <= 1e-9);
    assert_eq!(propmech(&["prop", "nonsense", "--samples", "5"], dir.path()).status.code(), Some(2));
}

#[test]
fn usage_and_io_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(propmech(&["solve", "missing.json"], dir.path()).status.code(), Some(2));
    assert_eq!(propmech(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(propmech(&["simulate", "x.json", "--variant", "other"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    assert_eq!(propmech(&["solve", "broken.json"], dir.path()).status.code(), Some(2));
    assert_eq!(propmech(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn bad_thread_cap_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_propmech"))
        .args(["prop", "feasibility", "--samples", "5"])
        .current_dir(dir.path())
        .env("MECH_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_executes_an_experiment_config() {
    let dir = canonical_dir();
    let config = r#"{
      "name": "canonical",
      "source": {"kind": "file", "path": "c.json"},
      "variant": "base",
      "assertions": {"converged": true, "equilibrium": true}
    }"#;
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    let out = propmech(&["run", "cfg.json", "-o", "bundle.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = json(dir.path(), "bundle.json");
    assert_eq!(bundle["summary"]["runs"], 1);
    assert_eq!(bundle["summary"]["passed"], 1);
}
