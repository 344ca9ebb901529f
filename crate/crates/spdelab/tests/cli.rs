use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use spdelab::io;

fn run(args: &[&str], config: &Value, out: &Path) -> (i32, String) {
    let cfg = out.join("config.json");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&cfg, config.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spdelab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .env("TOOL_THREADS", "2")
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn kernels_lists_the_builtin_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(&["kernels"], &json!({}), dir.path());
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("kernels.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["wiener", "fbm(H=0.75)", "linear", "bessel(delta=0.5)", "heat(delta=0.1)"]);
    assert!(csv.contains("linear,1e0,inf,"));
}

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(&["verify-lp"], &json!({ "params": {}, "typo": true }), dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("typo"));
    let (code, _) = run(&["verify-bessel"], &json!({ "params": { "phi": { "name": "nope" } } }), dir.path());
    assert_eq!(code, 2);
    let (code, _) = run(&["verify-apriori"], &json!({ "params": { "configs": [] }, "command": "kernels" }), dir.path());
    assert_eq!(code, 2);
}

#[test]
fn failing_report_exits_one_and_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "params": { "cases": [
        { "name": "log1p_claimed_mihlin", "symbol": { "name": "log1p" }, "dim": 1, "check": "mihlin", "expect_pass": true }
    ] } });
    let (code, _) = run(&["verify-multiplier"], &cfg, dir.path());
    assert_eq!(code, 1);
    let doc = read_json(&dir.path().join("verify-multiplier.json"));
    assert_eq!(doc["passed"], json!(false));
    let ledger = std::fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap();
    let entry: Value = serde_json::from_str(ledger.lines().last().unwrap()).unwrap();
    assert_eq!(entry["config_hash"], doc["config_hash"]);
}

#[test]
fn seed_flag_overrides_config_and_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "seed": 5, "params": { "n_samples": 500 } });
    run(&["verify-skorohod"], &cfg, &dir.path().join("a"));
    run(&["verify-skorohod", "--seed", "5"], &cfg, &dir.path().join("b"));
    run(&["verify-skorohod", "--seed", "6"], &cfg, &dir.path().join("c"));
    let h = |d: &str| read_json(&dir.path().join(d).join("verify-skorohod.json"))["config_hash"].clone();
    assert_eq!(h("a"), h("b"));
    assert_ne!(h("a"), h("c"));
}

/// Without forcing or noise the ensemble is the homogeneous solution: for
/// `ψ = −|ξ|²` and `u_0 = cos x` every sample equals `e^{−t} cos x`.
#[test]
fn noise_free_simulation_matches_heat_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "emit_plots": true,
        "params": {
            "problem": {
                "grid": { "d": 1, "n": 16, "L": 2.0 * std::f64::consts::PI },
                "psi": { "name": "neg_power", "gamma": 2.0 },
                "phi": { "name": "power", "gamma": 2.0 },
                "kernel": { "kernel": "wiener" },
                "lambdas": [1.0],
                "T": 1.0,
                "n_t": 8,
                "u0": { "type": "mode", "k": [1], "amplitude": 1.0 }
            },
            "n_samples": 3
        }
    });
    let (code, err) = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("simulate.svg").exists());
    let fields = io::read_fields(&dir.path().join("simulate.bin")).unwrap();
    assert_eq!(fields.len(), 9);
    for (i, f) in fields.iter().enumerate() {
        let t = i as f64 / 8.0;
        for idx in 0..16 {
            let x = f.grid.point(idx)[0];
            let v = f.values[idx];
            assert!((v.re - (-t).exp() * x.cos()).abs() < 1e-6 && v.im.abs() < 1e-6, "t = {t}, x = {x}: {v}");
        }
    }
    let doc = read_json(&dir.path().join("simulate.json"));
    let r = &doc["reports"][0]["mode_residual"];
    assert!(r["max_residual"].as_f64().unwrap() < 1e-2, "{r}");
}
