//! End-to-end runs of the `roast` binary.

use std::path::Path;
use std::process::{Command, Output};

fn roast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roast"))
        .args(args)
        .output()
        .expect("spawn roast")
}

fn write_reference(dir: &Path) -> String {
    let out = roast(&["reference-config", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.join("config.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_reference(dir.path());
    let mut metrics = Vec::new();
    for (jobs, name) in [("1", "a"), ("3", "b")] {
        let out_dir = dir.path().join(name);
        let out = roast(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--jobs", jobs]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        metrics.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    let text = String::from_utf8(metrics.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 46);

    // cached rerun leaves outputs untouched
    let out_dir = dir.path().join("a");
    let out = roast(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap(), text);

    let sweep = std::fs::read_to_string(out_dir.join("sensitivity.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(sweep.lines().next(), Some("parameter,perturbation_pct,jaccard"));
    assert_eq!(rows.len(), 42);
    assert_eq!(rows.iter().filter(|r| r.starts_with("coef:cgm,")).count(), 21);
    assert_eq!(rows.iter().filter(|r| r.starts_with("threshold,")).count(), 21);
    assert!(rows.iter().any(|r| r.starts_with("threshold,-50,")));
    assert!(rows.iter().any(|r| r.starts_with("threshold,50,")));
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(write_reference(dir.path())).unwrap();
    std::fs::write(&cfg, format!("unknown_key = 3\n{text}")).unwrap();
    let out_dir = dir.path().join("out");
    let out = roast(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
    assert!(!out_dir.exists());

    std::fs::write(&cfg, "version = 1\n[cohort]\nsource = \"synth\"\n").unwrap();
    let out = roast(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifact_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_reference(dir.path());
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    for stage in ["cohort", "victim", "attack", "risk"] {
        let r = roast(&[stage, "--config", &cfg, "--out", out]);
        assert!(r.status.success(), "{stage}: {}", String::from_utf8_lossy(&r.stderr));
    }
    std::fs::remove_file(out_dir.join("risk.json")).unwrap();
    let r = roast(&["cluster", "--config", &cfg, "--out", out]);
    assert_eq!(r.status.code(), Some(3));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("risk.json"), "{err}");
    assert!(err.contains("cluster"), "{err}");
}
