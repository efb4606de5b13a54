use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const GOLDEN: &str = "MARKOV\n2\n2 2\n1\n2 0 1\n4\n 1.0 2.718281828459045 2.718281828459045 1.0\n";

fn gdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdd")).args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// A loopy pairwise model over `n` variables of cardinality `d`.
fn ring(n: usize, d: usize) -> String {
    let mut text = format!("MARKOV\n{n}\n{}\n{}\n", vec![d.to_string(); n].join(" "), 2 * n);
    for i in 0..n {
        text += &format!("2 {i} {}\n", (i + 1) % n);
    }
    for i in 0..n {
        text += &format!("2 {i} {}\n", (i + 3) % n);
    }
    for k in 0..2 * n {
        let vals: Vec<String> = (0..d * d).map(|e| format!("{}", 1.0 + ((k * 7 + e * 3) % 5) as f64 * 0.4)).collect();
        text += &format!("\n{}\n{}\n", d * d, vals.join(" "));
    }
    text
}

#[test]
fn sum_mode_matches_the_exact_value() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.uai", GOLDEN);
    let r = json(&gdd(&["solve", s(&m), "--mode", "sum", "--oracle"]));
    let bound = r["bound"].as_f64().unwrap();
    assert!((bound - 2.0064089).abs() < 1e-7);
    assert!((bound - r["exact"].as_f64().unwrap()).abs() < 1e-9);
    assert_eq!(r["census"]["pairs"], 2);
}

#[test]
fn marginal_map_with_query_file() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.uai", GOLDEN);
    let q = write(&dir, "q.txt", "1 1");
    let trace = dir.path().join("trace.json");
    let r = json(&gdd(&["solve", s(&m), "--query", s(&q), "--trace", s(&trace), "--format", "json"]));
    assert!((r["bound"].as_f64().unwrap() - 1.3132617).abs() < 1e-7);
    assert_eq!(r["max_set"], serde_json::json!([1]));
    assert_eq!(r["decoded_config"].as_array().unwrap().len(), 1);
    let records = gdd::io::read_trace_json(&std::fs::read_to_string(trace).unwrap()).unwrap();
    assert_eq!(records[0].iteration, 0);
}

#[test]
fn oracle_refuses_large_models() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "big.uai", &ring(30, 2));
    let out = gdd(&["solve", s(&m), "--oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("big.uai") && err.contains("limit"), "{err}");
}

#[test]
fn input_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.uai", "MARKOV\n1\n2\n1\n1 0\n2\n-1 1\n");
    let out = gdd(&["solve", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.uai"));

    let m = write(&dir, "m.uai", GOLDEN);
    let q = write(&dir, "q.txt", "1 5");
    let out = gdd(&["solve", s(&m), "--query", s(&q)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q.txt"));

    let out = gdd(&["solve", s(&m), "--backtrack-factor", "2"]);
    assert_eq!(out.status.code(), Some(1));

    let out = gdd(&["solve", s(&dir.path().join("missing.uai"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn results_are_reproducible_and_traces_monotone() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "ring.uai", &ring(12, 3));
    let run = |extra: &[&str], threads: Option<&str>| {
        let trace = dir.path().join("t.csv");
        let mut args = vec!["solve", s(&m), "--seed", "4", "--trace", s(&trace)];
        args.extend_from_slice(extra);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gdd"));
        cmd.args(&args);
        if let Some(t) = threads {
            cmd.env("POWERSUM_THREADS", t);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        let csv = std::fs::read_to_string(trace).unwrap();
        let bounds: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(bounds.windows(2).all(|w| w[1] <= w[0]), "{bounds:?}");
        out.stdout
    };
    let a = run(&[], None);
    assert_eq!(a, run(&[], None));
    assert_eq!(a, run(&["--parallel"], None));
    assert_eq!(a, run(&["--parallel"], Some("2")));
    assert_eq!(a, run(&["--parallel"], Some("0")));
}

#[test]
fn timing_is_opt_in() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.uai", GOLDEN);
    assert!(json(&gdd(&["solve", s(&m)])).get("wall_time_s").is_none());
    assert!(json(&gdd(&["solve", s(&m), "--timing"]))["wall_time_s"].is_f64());
}

#[test]
fn check_suites_pass() {
    let r = json(&gdd(&["check", "holder", "--trials", "1000", "--seed", "7"]));
    assert_eq!(r[0]["passed"], true);

    let r = json(&gdd(&["check", "gradients", "parallel", "--trials", "10"]));
    assert!(r[0]["metric"].as_f64().unwrap() <= 1e-5);
    assert_eq!(r[1]["passed"], true);

    let out = gdd(&["check", "nonsense"]);
    assert!(!out.status.success());
}
