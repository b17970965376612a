use std::path::PathBuf;
use std::process::{Command, Output};

fn tcml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcml")).args(args).output().unwrap()
}

fn program(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "programs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tcml-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn check_accepts_sno() {
    let o = tcml(&["check", &program("sno.tcml")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("ok"));
}

#[test]
fn check_reports_type_errors() {
    let bad = tmp("bad.tcml");
    std::fs::write(&bad, "let x = 1 in x + true").unwrap();
    let o = tcml(&["check", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("type mismatch"));
    std::fs::write(&bad, "let x = in").unwrap();
    assert_eq!(tcml(&["check", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn missing_file_and_bad_flags_are_usage_errors() {
    assert_eq!(tcml(&["check", "/no/such/file.tcml"]).status.code(), Some(2));
    assert_eq!(tcml(&["bench", "--duration-ms", "0"]).status.code(), Some(2));
    assert_eq!(tcml(&["bench", "-n", "2"]).status.code(), Some(2));
    assert_eq!(tcml(&["bench", "--scheduler", "xyz"]).status.code(), Some(2));
    assert_eq!(tcml(&["bench", "--run-prob", "0.5"]).status.code(), Some(2));
    assert_eq!(tcml(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn oracle_matches_golden() {
    let o = tcml(&["oracle", &program("nested.tcml"), "--fuel", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let got: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let want: serde_json::Value = serde_json::from_str(include_str!("golden/nested_oracle.json")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn run_reaches_an_oracle_outcome() {
    let want: serde_json::Value = serde_json::from_str(include_str!("golden/nested_oracle.json")).unwrap();
    for sched in ["r", "s", "cd", "da"] {
        let o = tcml(&["run", &program("nested.tcml"), "--deterministic", "--scheduler", sched, "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0));
        let got: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(want["outcomes"].as_array().unwrap().contains(&got), "{sched}: {got}");
    }
}

#[test]
fn deterministic_run_traces_repeat() {
    let (a, b) = (tmp("a.ndjson"), tmp("b.ndjson"));
    for t in [&a, &b] {
        let o = tcml(&["run", &program("mixed.tcml"), "--deterministic", "--seed", "11", "--trace", t.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bench_emits_source_and_json() {
    let o = tcml(&["bench", "--benchmark", "sno", "--carol", "0", "--emit-source"]);
    assert_eq!(o.status.code(), Some(0));
    let src = stdout(&o);
    assert!(src.contains("spawn alice") && !src.contains("spawn carol"));

    let o = tcml(&["bench", "--deterministic", "--duration-ms", "500", "--repetitions", "2", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["benchmark"], "3wr");
    assert_eq!(r["repetitions"].as_array().unwrap().len(), 2);
}

#[test]
fn trace_stats_on_bench_traces() {
    let dir = tmp("traces");
    let d = dir.to_str().unwrap();
    let o = tcml(&["bench", "--deterministic", "--duration-ms", "1500", "--scheduler", "da", "--trace-dir", d]);
    assert_eq!(o.status.code(), Some(0));
    let trace = dir.join("trace-1.ndjson");
    let t = trace.to_str().unwrap();
    let o = tcml(&["trace-stats", t, "--scheduler", "da"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("abort-timer: 0 violations"));
    // The runtime waited 50 ms, not 10 s.
    assert_eq!(tcml(&["trace-stats", t, "--scheduler", "da", "--da-timeout-ms", "10000"]).status.code(), Some(1));

    std::fs::write(&trace, "{not json").unwrap();
    assert_eq!(tcml(&["trace-stats", t]).status.code(), Some(1));
}
