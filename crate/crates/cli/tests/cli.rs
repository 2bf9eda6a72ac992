use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use khessian_core::lab::ExperimentConfig;

fn khlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_khlab")).args(args).output().expect("spawn khlab")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn print_defaults_round_trips() {
    let out = khlab(&["print-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn malformed_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "problem = \"khessian-ring\"\n[grid]\nh = -1.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = khlab(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(diag["error"].as_str().unwrap().contains('h'));
    assert!(!out_dir.exists());

    std::fs::write(&cfg, "problem = \"khessian-ring\"\nunknown_key = 3\n").unwrap();
    let out = khlab(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn sweep_needs_a_list() {
    let out = khlab(&["sweep", configs().join("normalize.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = khlab(&["run", configs().join("normalize.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS reconstruction")));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["problem"], "normalize-demo");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn profile_mu_at_zero_is_minus_r0() {
    let out = khlab(&["profile", "mu", "--alpha", "0", "--r0", "40"]);
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert_eq!(v, -40.0);

    let out = khlab(&["profile", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
