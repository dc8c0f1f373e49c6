use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elastic-sgd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cli")
}

fn small_config(seed: u64) -> Value {
    json!({
        "model": {"kind": "logistic_regression", "input_dim": 2},
        "dataset": {"kind": "blobs", "n": 128, "seed": seed},
        "optimizer": {"strategy": "linear_scaling", "base_lr": 0.2, "momentum": 0.9, "base_batch": 8},
        "schedule": {"kind": "spike", "n_base": 2, "epoch": 2, "k": 4.0},
        "batch_policy": {"kind": "fixed_per_worker", "value": 4},
        "epochs": 4,
        "seed": seed
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_a_deterministic_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config(1));
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = run(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(summary["diverged"], false);
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("{\"header\""));
    assert!(text.lines().last().unwrap().starts_with("{\"summary\""));
}

#[test]
fn validation_errors_exit_1_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config(1);
    v["optimizer"]["momentum"] = json!(1.2);
    v.as_object_mut().unwrap().remove("seed");
    let cfg = write(dir.path(), "bad.json", &v);
    let o = run(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("optimizer.momentum") && err.contains("seed: missing"), "{err}");

    assert_eq!(run(&["preset", "imagenet"]).status.code(), Some(1));
    assert_eq!(run(&["run", "/nonexistent/config.json"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "model": {"kind": "quadratic", "eigenvalues": [1.0, 2.0]},
        "dataset": {"kind": "noisy_quadratic", "dim": 2, "sigma2": 1.0, "n": 16, "seed": 0},
        "optimizer": {"strategy": "plain_sgd", "base_lr": 5.0, "base_batch": 1},
        "lr_schedule": {"kind": "constant"},
        "schedule": {"kind": "static", "n_base": 1},
        "batch_policy": {"kind": "fixed_total", "value": 1},
        "epochs": 20,
        "seed": 0
    });
    let cfg = write(dir.path(), "div.json", &v);
    let o = run(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["diverged"], true);
}

#[test]
fn preset_config_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["preset", "damp", "--seed", "3", "--epochs", "2", "--print-config"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["lr_schedule"]["warmup_epochs"], 5.0);
    let path = write(dir.path(), "damp.json", &cfg);
    let rec = dir.path().join("r.jsonl");
    assert_eq!(run(&["run", &path, "--out", rec.to_str().unwrap()]).status.code(), Some(0));
    let text = std::fs::read_to_string(&rec).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["config"], cfg);

    // The echoed header config alone reproduces the record.
    let echo = write(dir.path(), "echo.json", &header["header"]["config"]);
    let rec2 = dir.path().join("r2.jsonl");
    assert_eq!(run(&["run", &echo, "--out", rec2.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(text, std::fs::read_to_string(&rec2).unwrap());
}

#[test]
fn compare_tabulates_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for strategy in ["linear_scaling", "dynamic_sgd"] {
        let mut v = small_config(2);
        v["optimizer"]["strategy"] = json!(strategy);
        let cfg = write(dir.path(), &format!("{strategy}.json"), &v);
        let out = dir.path().join(format!("{strategy}.jsonl"));
        assert_eq!(run(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
        paths.push(out.to_str().unwrap().to_string());
    }
    let o = run(&["compare", &paths[0], &paths[1]]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("linear_scaling") && table.contains("dynamic_sgd"), "{table}");

    let o = run(&["compare", "--json", &paths[0], &paths[0]]);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["rows"][1]["final_loss_delta"], 0.0);
    assert_eq!(report["rows"][1]["spike_delta"], 0.0);

    let cfg = write(dir.path(), "other.json", &small_config(3));
    let other = dir.path().join("other.jsonl");
    run(&["run", &cfg, "--out", other.to_str().unwrap()]);
    assert_eq!(run(&["compare", &paths[0], other.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn analyze_noise_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ns.json");
    let o = run(&["preset", "noise_scan", "--print-config"]);
    std::fs::write(&cfg, &o.stdout).unwrap();
    let csv = dir.path().join("noise.csv");
    let o = run(&["analyze", "noise", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["checks"][0]["pass"], true, "{report}");
    let table = std::fs::read_to_string(csv).unwrap();
    assert!(table.starts_with("batch,variance,replicas,ci_low,ci_high\n1,"));
    assert_eq!(table.lines().count(), 10);
}

#[test]
fn analyze_theorem_rejects_non_quadratic_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config(1));
    assert_eq!(run(&["analyze", "theorem", &cfg]).status.code(), Some(1));

    let o = run(&["preset", "theorem_quadratic", "--print-config"]);
    let thm = dir.path().join("t.json");
    std::fs::write(&thm, &o.stdout).unwrap();
    let o = run(&["analyze", "theorem", thm.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true), "{report}");
}

#[test]
fn cluster_modes_match_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for mode in ["simulate", "cluster_inproc", "cluster_tcp"] {
        let mut v = small_config(4);
        v["mode"] = json!(mode);
        v["cluster"] = json!({"heartbeat_ms": 200});
        let cfg = write(dir.path(), &format!("{mode}.json"), &v);
        let o = run(&["run", &cfg]);
        assert_eq!(o.status.code(), Some(0), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        outs.push(String::from_utf8(o.stdout).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}
