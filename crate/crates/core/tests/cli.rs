use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hsch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsch")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), r#"{"scenario": "ch1d", "dt": 0.001, "t_end": 0.01, "cells": [32, 1]}"#);
    let out = hsch(&["validate", "--config", &good]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = write_config(dir.path(), r#"{"dt": 0.001, "t_end": 0.01, "lambda": -1}"#);
    let out = hsch(&["validate", "--config", &bad, "--scenario", "hsch2d"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let unknown = write_config(dir.path(), r#"{"dt": 0.001, "t_end": 0.01, "speed": 3}"#);
    assert_eq!(hsch(&["validate", "--config", &unknown]).status.code(), Some(2));
}

#[test]
fn constant_phase_is_left_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"dt": 0.001, "t_end": 0.02, "cells": [32, 1], "phi0": {"type": "constant", "value": 1.0},
            "output": {"snapshot_every": 10, "ledger_every": 1}}"#,
    );
    let out_dir = dir.path().join("out");
    let out = hsch(&["ch1d", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut snaps: Vec<_> = fs::read_dir(out_dir.join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "f64"))
        .collect();
    snaps.sort();
    assert!(snaps.len() >= 2);
    let first = fs::read(&snaps[0]).unwrap();
    for s in &snaps[1..] {
        assert_eq!(fs::read(s).unwrap(), first, "{}", s.display());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn kernel_reports_its_initial_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dt": 0.001, "t_end": 0.2, "cells": [16, 16]}"#);
    let out_dir = dir.path().join("k");
    let out = hsch(&["kernel", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let g0: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("g(0) = "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(g0.is_finite() && g0 > 0.0, "{g0}");
    assert!(out_dir.join("ledger.csv").exists());
}
