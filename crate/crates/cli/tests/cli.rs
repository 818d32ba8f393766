//! End-to-end runs of the `mmfg` binary.

use std::path::PathBuf;
use std::process::Command;

fn out_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("mmfg-cli-{tag}-{}", std::process::id()))
}

fn mmfg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mmfg")).args(args).output().unwrap()
}

#[test]
fn decay_writes_its_report() {
    let out = out_dir("decay");
    let r = mmfg(&["decay", "--set", "decay.n=64", "--set", "decay.dt=1e-3", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("decay.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 64);
    assert!(v["gamma_transport"].as_f64().unwrap() > 0.0);
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn config_file_then_overrides() {
    let out = out_dir("sweep");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("run.cfg");
    std::fs::write(&cfg, "model = zero\ngrid.n = 16\ntree.K = 2\nsweep.sigma0 = 1, 2\n").unwrap();
    let r = mmfg(&[
        "sweep-sigma",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "sweep.sigma0=0.5,1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(out.join("sigma_sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma0,max_ratio,spread,iterations,status");
    assert_eq!(lines.len(), 4);
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn unknown_keys_fail() {
    let r = mmfg(&["solve", "--set", "grid.size=3"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("grid.size"));
}

#[test]
fn accept_subset_writes_a_manifest() {
    let out = out_dir("accept");
    let r = mmfg(&["accept", "--only", "2,3", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(v["all_pass"], true);
    std::fs::remove_dir_all(out).unwrap();
}
