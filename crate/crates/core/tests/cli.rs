use std::path::Path;
use std::process::{Command, Output};

use vrsim::metrics::read_metrics_csv;
use vrsim::workload::load_traces;

fn vrsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vrsim(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, "seed = 4\n\n[system]\nusers = 2\nhorizon = 12\nepisodes = 3\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_traces_writes_every_user_slot_and_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("traces.csv");
    ok(&["gen-traces", "--config", &cfg, "--out", s(&out)]);
    let t = load_traces(&out).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.records().count(), 12 * 2 * 3);
}

#[test]
fn run_baseline_writes_one_row_per_episode_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("plf.csv");
    let log = dir.path().join("events.log");
    ok(&[
        "run-baseline", "--config", &cfg, "--kind", "plf", "--episodes", "2", "--out", s(&out), "--event-log", s(&log),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# config_sha256="));
    let m = read_metrics_csv(text.as_bytes()).unwrap();
    assert_eq!(m.rows.len(), 2);
    assert!(m.aggregate.is_some());
    let events = std::fs::read_to_string(&log).unwrap();
    assert_eq!(events.lines().filter(|l| l.starts_with("# episode")).count(), 2);
    assert!(events.lines().any(|l| l.contains("enqueue r_d")));

    let parallel = dir.path().join("plf2.csv");
    ok(&["run-baseline", "--config", &cfg, "--kind", "plf", "--episodes", "2", "--out", s(&parallel)]);
    assert_eq!(text, std::fs::read_to_string(&parallel).unwrap());
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep.csv");
    ok(&[
        "sweep", "--config", &cfg, "--var", "bandwidth", "--grid", "100e6:800e6:100e6", "--kind", "mec-lf",
        "--episodes", "1", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(data[0].starts_with("bandwidth,mean_age_ms"));
    assert_eq!(data.len(), 9);
    assert!(data[1].starts_with("100000000,"));
}

#[test]
fn evaluate_replays_an_action_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let actions = dir.path().join("actions.jsonl");
    let step = r#"{"cmd":"step","action":{"zf":[0,1],"xb":[[0,1,0,0,0],[0,0,0,0,1]],"zb":[[0,0,0,0,0],[0,0,0,0,1]],"wB":[0,0],"wF":[1,-1]}}"#;
    let mut log = String::from("{\"cmd\":\"reset\",\"episode\":2,\"seed\":9}\n");
    for _ in 0..12 {
        log.push_str(step);
        log.push('\n');
    }
    std::fs::write(&actions, log).unwrap();
    let out = dir.path().join("eval.csv");
    ok(&["evaluate", "--config", &cfg, "--actions", s(&actions), "--out", s(&out)]);
    let m = read_metrics_csv(std::fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(m.rows.len(), 1);
    assert_eq!(m.rows[0].episode, 2);
}

#[test]
fn bad_arguments_fail() {
    assert!(!vrsim(&["run-baseline", "--kind", "plf", "--out", "/dev/null", "--bogus"]).status.success());
    assert!(!vrsim(&["run-baseline", "--kind", "best", "--out", "/dev/null"]).status.success());
    assert!(!vrsim(&["evaluate", "--actions", "/nonexistent/actions.jsonl", "--out", "/dev/null"]).status.success());
}
