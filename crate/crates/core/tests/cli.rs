use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const HFORM: &str = r#"{"m": 2, "N": 2, "p": 2.0, "form": "h-form", "a": {"kind": "constant", "value": 1.0},
                        "h": {"kind": "paper-h", "T": 1.0, "s": 1.0}, "C": 1.0}"#;
const DOUBLE_WELL: &str = r#"{"m": 1, "N": 1, "p": 4.0, "form": "double-well",
                              "a": {"kind": "constant", "value": 1.0}, "C": 0.001}"#;
const LAYERED: &str = r#"{"m": 1, "N": 1, "p": 2.0, "form": "power",
                          "a": {"kind": "piecewise-grid", "cells": [2], "values": [1.0, 4.0]}, "C": 1.0}"#;

fn run(dir: &Path, name: &str, config: &str) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{name}.json"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(name);
    let output = Command::new(env!("CARGO_BIN_EXE_singhom"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (output, out)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("run-manifest.json")).unwrap()).unwrap()
}

fn csv_rows(out: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(out.join("results.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn check_reports_hform_constants() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(dir.path(), "check", &format!(r#"{{"command": "check", "integrand": {HFORM}, "numeric": {{"seed": 1}}}}"#));
    assert_eq!(o.status.code(), Some(0));
    let json: Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["chat2"]["alpha"], 2.0);
    assert_eq!(json["chat2"]["beta"], 1.0);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["spec_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn envelope_double_well_row_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "envelope", "integrand": {DOUBLE_WELL},
            "grids": {{"ranges": {{"lo": [-2.0], "hi": [2.0], "nodes": [41]}}}}, "numeric": {{"seed": 1}}}}"#
    );
    let (o, out) = run(dir.path(), "env", &cfg);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["x1", "xi_11", "mesh_n", "value", "starts", "converged"]);
    assert_eq!(rows.len(), 42);
    let zero = rows.iter().find(|r| r[1] == "0.0000000000000000e0").unwrap();
    assert!(zero[3].parse::<f64>().unwrap() <= 0.05);
}

#[test]
fn gamma_layered_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "gamma", "integrand": {LAYERED}, "grids": {{"points": [[1.0]]}},
            "numeric": {{"mesh-n": 32, "eps-list": [1.0, 0.5, 0.25], "starts": 4, "seed": 2}}}}"#
    );
    let (o, out) = run(dir.path(), "gamma", &cfg);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["epsilon", "min_energy", "reference", "relative_gap"]);
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert!(r[3].parse::<f64>().unwrap() <= 0.02);
    }
}

#[test]
fn validation_errors_exit_2_with_all_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "gamma", "integrand": {LAYERED}, "grids": {{"points": [[1.0]]}},
            "numeric": {{"eps-list": [0.5, 0.5], "k-max": 9}}}}"#
    );
    let (o, out) = run(dir.path(), "bad", &cfg);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("numeric.seed required"));
    assert!(stderr.contains("eps-list must be strictly decreasing"));
    assert!(stderr.contains("numeric.k-max"));
    let m = manifest(&out);
    assert_eq!(m["status"], "validation-error");
    assert!(!out.join("results.csv").exists());
}

#[test]
fn unreadable_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(dir.path(), "broken", "{\n \"command\": \"check\",\n oops }");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 3"));
    assert_eq!(manifest(&out)["exit_code"], 2);
}

#[test]
fn construction_failure_exits_3_and_keeps_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "laminate", "integrand": {HFORM}, "grids": {{"points": [[1.0, 0.0, 0.0, 1.0]]}},
            "numeric": {{"seed": 1, "max-depth": 0, "det-window": [0.0, 2.0]}}}}"#
    );
    let (o, out) = run(dir.path(), "fail", &cfg);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(&out);
    assert_eq!(m["status"], "numerical-failure");
    assert!(m["diagnostics"][0].as_str().unwrap().contains("laminate"));
}

#[test]
fn laminate_rows_outside_window_are_marked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "laminate", "integrand": {HFORM},
            "grids": {{"points": [[1.0, 0.0, 0.0, 1.0], [3.0, 0.0, 0.0, 1.0]]}}, "numeric": {{"seed": 1, "mesh-n": 32}}}}"#
    );
    let (o, out) = run(dir.path(), "lam", &cfg);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows[1][5], "laminated");
    assert_eq!(rows[2][5], "outside-window");
    assert_eq!(rows[2][10], "1.1000000000000000e1");
}

#[test]
fn whom_table_has_one_row_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"command": "whom", "integrand": {LAYERED}, "grids": {{"points": [[1.0], [0.5]]}},
            "numeric": {{"mesh-n": 16, "k-max": 2, "starts": 4, "seed": 1}}}}"#
    );
    let (o, out) = run(dir.path(), "whom", &cfg);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["xi_11", "k", "m_k", "whom"]);
    assert_eq!(rows.len(), 5);
    let json: Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 2);
}
