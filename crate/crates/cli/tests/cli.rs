use std::path::Path;
use std::process::{Command, Output};

use rfexplore::harness::{format_float, ExperimentConfig};
use rfexplore::mdp::plan_optimal;

fn rfexplore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfexplore")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_exits_with_two() {
    let out = rfexplore(&["plan", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn unknown_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"lenght": 7}"#);
    assert_eq!(rfexplore(&["plan", "--config", &config]).status.code(), Some(2));
}

#[test]
fn plan_prints_the_library_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"length": 7, "horizon": 5}"#);
    let out_dir = dir.path().join("out");
    let out = rfexplore(&["plan", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig { length: 7, horizon: 5, ..Default::default() };
    let mdp = cfg.build_env().unwrap();
    let value = plan_optimal(&mdp, mdp.rewards()).unwrap().1.v(0, mdp.initial_state());
    assert_eq!(stdout.lines().next().unwrap(), format_float(value));
    assert!(out_dir.join("plan.csv").exists());
}

#[test]
fn curve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"length": 7, "horizon": 5, "budget": 500, "checkpoints": [100, 500], "seeds": 2}"#,
    );
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = rfexplore(&["curve", "--config", &config, "--seed", "7", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(out_dir.join("curve.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("schema,"));
}

#[test]
fn json_output_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"length": 5, "horizon": 3, "budget": 60, "agents": ["gm", "rf"]}"#);
    let out_dir = dir.path().join("out");
    let out = rfexplore(&["visits", "--config", &config, "--format", "json", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(out_dir.join("visits.json")).unwrap();
    assert!(text.trim_start().starts_with('['));
}

#[test]
fn exhausted_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"length": 7, "horizon": 5, "budget": 50, "epsilon": 0.1}"#);
    let out_dir = dir.path().join("out");
    let out = rfexplore(&["explore", "--agent", "rf", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn large_epsilon_stops_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        write_config(dir.path(), r#"{"length": 7, "horizon": 5, "budget": 50, "epsilon": 30.0, "clipped": true}"#);
    let out_dir = dir.path().join("out");
    let out = rfexplore(&["explore", "--agent", "rf", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("stopped at episode 0"));
}
