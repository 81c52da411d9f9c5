//! End-to-end tests of the `slowmix` binary: report envelopes, closed-form
//! values on the built-in fixtures, determinism, seed precedence, exit
//! codes, and CSV side outputs.

use serde_json::Value;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_slowmix");

fn slowmix(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SLOWMIX_SEED")
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = slowmix(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Failing invocations print a one-line machine-readable error and exit
/// with the classified code.
fn error_report(args: &[&str]) -> (i32, Value) {
    let out = slowmix(args);
    let code = out.status.code().expect("no signal");
    assert_ne!(code, 0, "command {args:?} unexpectedly succeeded");
    let value = serde_json::from_slice(&out.stdout).expect("error output is JSON");
    (code, value)
}

#[test]
fn fixtures_lists_catalog() {
    let doc = report(&["fixtures"]);
    let names: Vec<&str> = doc["report"]
        .as_array()
        .expect("catalog array")
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    for expected in [
        "example1",
        "example2",
        "example3a",
        "example3a-slow",
        "example3b",
        "example4",
        "example5",
        "decay-member",
        "slowswitch",
        "periodic-pair",
    ] {
        assert!(names.contains(&expected), "catalog is missing {expected}");
    }
    assert_eq!(doc["command"], "fixtures");
    assert!(doc["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn stationary_matches_closed_forms() {
    let doc = report(&["stationary", "--fixture", "example4"]);
    let mu: Vec<f64> = doc["report"]["mu"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let states: Vec<&str> = doc["report"]["states"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(states, ["0", "01", "11"]);
    for (got, want) in mu.iter().zip([12.0 / 25.0, 9.0 / 25.0, 4.0 / 25.0]) {
        assert!((got - want).abs() < 1e-10, "example4 mu {got} vs {want}");
    }

    let doc = report(&["stationary", "--fixture", "example3b"]);
    let mu = doc["report"]["mu"].as_array().unwrap();
    assert!((mu[0].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-10);
    assert!((mu[1].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-10);

    // The all-zeros state of the hidden-state tree has mass 1/(2^(k+1)-1).
    let doc = report(&["stationary", "--fixture", "example2(k=3,eps=0.1)"]);
    let states = doc["report"]["states"].as_array().unwrap();
    let mu = doc["report"]["mu"].as_array().unwrap();
    let idx = states.iter().position(|s| s == "000").expect("leaf 000");
    assert!((mu[idx].as_f64().unwrap() - 1.0 / 15.0).abs() < 1e-10);
}

#[test]
fn aggregate_reports_depth_one_rows() {
    let doc = report(&["aggregate", "--fixture", "example4", "--depth", "1"]);
    let q = &doc["report"]["aggregated"]["model"]["q"];
    let row1 = q["1"].as_array().unwrap();
    assert!((row1[1].as_f64().unwrap() - 4.0 / 13.0).abs() < 1e-12);
    let row0 = q["0"].as_array().unwrap();
    assert!((row0[1].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn run_recovers_aggregated_row() {
    let doc = report(&[
        "run",
        "--fixture",
        "example4",
        "--n",
        "1000000",
        "--seed",
        "7",
        "--k-n",
        "1",
    ]);
    let rep = &doc["report"];
    assert_eq!(rep["uncertified_states"].as_array().unwrap().len(), 0);
    let rows = rep["estimation"]["theta_hat"]["1"].as_array().unwrap();
    for row in rows {
        let p1 = row.as_array().unwrap()[1].as_f64().unwrap();
        assert!(
            (p1 - 4.0 / 13.0).abs() < 0.01,
            "estimated symbol-1 rate {p1} vs 4/13"
        );
    }
    assert_eq!(rep["certificate"]["aperiodic"], true);
    assert!(rep["certificate"]["threshold"].as_f64().unwrap() > 0.0);
}

#[test]
fn run_flags_uncertified_slow_state() {
    let doc = report(&[
        "run",
        "--fixture",
        "example3a-slow",
        "--n",
        "100000",
        "--seed",
        "1",
        "--k-n",
        "1",
    ]);
    let uncertified: Vec<&str> = doc["report"]["uncertified_states"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(uncertified, ["0"], "the sticky state never clears the threshold");
}

#[test]
fn zero_samples_is_a_config_error() {
    let (code, err) = error_report(&["run", "--fixture", "example4", "--n", "0"]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "config");
    let (code, err) = error_report(&[
        "estimate",
        "--fixture",
        "example4",
        "--n",
        "100",
        "--decay",
        "exponential:2",
    ]);
    assert_eq!(code, 2, "decay rate outside (0,1) is a config error");
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn empty_good_set_is_a_certificate_error() {
    let (code, err) = error_report(&[
        "estimate",
        "--fixture",
        "example5(eps=0.2)",
        "--n",
        "100",
        "--k-n",
        "2",
        "--decay",
        "zero",
    ]);
    assert_eq!(code, 4);
    assert_eq!(err["error"]["kind"], "certificate");
}

#[test]
fn repeated_reports_are_byte_identical() {
    let args = [
        "estimate",
        "--fixture",
        "example5(eps=0.2)",
        "--n",
        "20000",
        "--seed",
        "3",
        "--k-n",
        "2",
        "--decay",
        "table:3,0:zero",
    ];
    let first = slowmix(&args);
    let second = slowmix(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout, "same invocation, same bytes");
}

#[test]
fn seed_resolution_prefers_flag_over_env() {
    let with_env = Command::new(BIN)
        .args(["simulate", "--fixture", "example4", "--n", "5"])
        .env("SLOWMIX_SEED", "9")
        .output()
        .unwrap();
    let doc: Value = serde_json::from_slice(&with_env.stdout).unwrap();
    assert_eq!(doc["config"]["seed"], 9, "env overrides the default");

    let with_flag = Command::new(BIN)
        .args(["simulate", "--fixture", "example4", "--n", "5", "--seed", "4"])
        .env("SLOWMIX_SEED", "9")
        .output()
        .unwrap();
    let doc: Value = serde_json::from_slice(&with_flag.stdout).unwrap();
    assert_eq!(doc["config"]["seed"], 4, "the flag wins over the env");
}

#[test]
fn couple_writes_per_run_coalescence_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let doc = report(&[
        "couple",
        "--fixture",
        "example5(eps=0.2)",
        "--n",
        "50000",
        "--seed",
        "3",
        "--k-n",
        "2",
        "--decay",
        "table:3,0:zero",
        "--runs",
        "20",
        "--horizon",
        "400",
        "--out",
        out,
    ]);
    assert_eq!(doc["report"]["coalesced"], 20, "every run coalesces");
    assert_eq!(doc["report"]["per_run"].as_array().unwrap().len(), 20);

    let csv = std::fs::read_to_string(dir.path().join("coalescence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 21, "header plus one row per run");
    assert_eq!(
        lines[0],
        "run,seed,coalesced,tau,divergences_after,steps,matched_steps"
    );
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "true");
        assert_eq!(fields[4], "0", "no divergence after coalescence");
    }
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn run_with_config_file_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let config_path = dir.path().join("experiment.json");
    let config = serde_json::json!({
        "fixture": "example5(eps=0.2)",
        "n": 30000,
        "seed": 11,
        "k_n": 2,
        "decay": {"kind": "table", "values": [3.0, 0.0], "tail": {"kind": "zero"}},
        "out": out_dir,
        "couple": {"runs": 5, "horizon": 300}
    });
    std::fs::write(&config_path, config.to_string()).unwrap();

    let doc = report(&["run", "--config", config_path.to_str().unwrap()]);
    assert_eq!(doc["config"]["seed"], 11);
    assert_eq!(doc["report"]["coupling"]["coalesced"], 5);
    for table in ["report.json", "counts.csv", "trajectory.csv", "coalescence.csv"] {
        assert!(out_dir.join(table).exists(), "missing {table}");
    }
    // The stdout envelope and the written report agree byte for byte
    // (modulo the trailing newline on the file).
    let written = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let reparsed: Value = serde_json::from_str(&written).unwrap();
    assert_eq!(reparsed["config_hash"], doc["config_hash"]);
}

#[test]
fn validate_accepts_files_and_classifies_failures() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("model.json");
    std::fs::write(
        &good,
        r#"{"alphabet":2,"leaves":["0","1"],"q":{"0":[0.25,0.75],"1":[0.5,0.5]}}"#,
    )
    .unwrap();
    let doc = report(&["model", "validate", "--model", good.to_str().unwrap()]);
    assert_eq!(doc["report"]["valid"], true);
    assert_eq!(doc["report"]["kind"], "model");
    assert_eq!(doc["report"]["depth"], 1);
    assert_eq!(doc["source"]["origin"], "file");
    assert_eq!(doc["source"]["sha256"].as_str().unwrap().len(), 64);

    // Valid JSON that is not a model: a numeric (content) failure.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"bogus": true}"#).unwrap();
    let (code, err) = error_report(&["model", "validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert_eq!(err["error"]["kind"], "numeric");

    // Not JSON at all: a configuration failure.
    let worse = dir.path().join("worse.json");
    std::fs::write(&worse, "not json").unwrap();
    let (code, err) = error_report(&["model", "validate", "--model", worse.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn ctw_certificate_has_nonnegative_slack() {
    let doc = report(&[
        "ctw",
        "--fixture",
        "example5(eps=0.3)",
        "--n",
        "2000",
        "--seed",
        "2",
        "--k-n",
        "2",
    ]);
    let slack = doc["report"]["slack"].as_f64().unwrap();
    assert!(slack >= 0.0, "pointwise redundancy within budget, got {slack}");
}

#[test]
fn rate_of_input_independent_channel_is_zero() {
    let doc = report(&["rate", "--fixture", "example3b", "--depth", "1"]);
    assert_eq!(doc["report"]["rate"]["total"].as_f64().unwrap(), 0.0);
    let gap = doc["report"]["aggregated_bound"]["gap"].as_f64().unwrap();
    assert!(gap >= -1e-12);
}
