use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circlefib")).args(args).output().expect("binary runs")
}

fn run_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circlefib"))
        .args(args)
        .env("TOOLKIT_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(run(&["validate", "--spec", &data("hopf_s3.json")]).status.code(), Some(0));
    assert_eq!(run(&["validate", "--spec", &data("sum_s5.json"), "--samples", "20"]).status.code(), Some(0));
    let big = run(&["validate", "--spec", &data("perturbed_large.json"), "--samples", "20"]);
    assert_eq!(big.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&big.stdout).unwrap();
    assert_eq!(report["report"]["verdict"], false);
    assert!(report["report"]["checks"].as_array().unwrap().iter().any(|c| c["name"] == "ellipticity_min"));
    assert_eq!(run(&["validate", "--spec", &data("malformed.json")]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--spec", &data("no_such_file.json")]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--spec", &data("hopf_s3.json"), "--tol", "membership=0"]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--spec", &data("hopf_s3.json"), "--tol", "bogus=1"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invariants_vanish_on_hopf_and_s3() {
    let out = run(&["invariants", "--spec", &data("hopf_s3.json"), "--samples", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert!(r[5].parse::<f64>().unwrap() < 1e-9);
        assert_eq!(r[7], "B");
    }
    let out = run(&["invariants", "--spec", &data("perturbed_s3.json"), "--samples", "10"]);
    assert_eq!(out.status.code(), Some(0));
    for r in csv_rows(&out) {
        assert!(r[5].parse::<f64>().unwrap() < 1e-8);
    }
}

#[test]
fn output_is_deterministic_across_thread_counts() {
    let args = ["invariants", "--spec", &data("conjugated_s3.json"), "--samples", "12", "--format", "json"];
    let a = run_env(&args, "1");
    let b = run_env(&args, "4");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(run_env(&args, "zero").status.code(), Some(2));
}

#[test]
fn straighten_conjugated_and_exhausted() {
    let out = run(&["straighten", "--spec", &data("conjugated_s3.json"), "--target", &data("target_s3.json"), "--circles", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cert = &doc["report"]["certification"];
    assert_eq!(cert["verdict"], true);
    assert!(cert["fiber_dev_max"].as_f64().unwrap() < 1e-6);
    assert_eq!(doc["report"]["map_samples"].as_array().unwrap().len(), 8);
    let cert_text = serde_json::to_string(cert).unwrap();
    assert!(circlefib::specfile::parse_certification_report(&cert_text).unwrap().verdict);

    let none = run(&["straighten", "--spec", &data("conjugated_s3.json"), "--budget", "0"]);
    assert_eq!(none.status.code(), Some(4));
    assert!(none.stdout.is_empty());
    let wrong_n = run(&["straighten", "--spec", &data("hopf_s5.json"), "--target", &data("target_s3.json")]);
    assert_eq!(wrong_n.status.code(), Some(2));
}

#[test]
fn straighten_perturbed_passes_at_loose_tolerance() {
    let out = run(&["straighten", "--spec", &data("perturbed_s3.json"), "--circles", "8", "--points", "16", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0][5], "true");
    assert!(rows[0][0].parse::<f64>().unwrap() < 1e-3);
}

#[test]
fn pointcloud_counts_and_planarity() {
    let out = run(&["pointcloud", "--spec", &data("hopf_s3.json"), "--circles", "3", "--points", "64"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 192);
    assert!(rows.iter().all(|r| r.len() == 4));

    let raw = run(&["pointcloud", "--spec", &data("conjugated_s3.json"), "--projection", "none", "--circles", "3", "--points", "16"]);
    let rows = csv_rows(&raw);
    for id in 0..3 {
        let pts: Vec<Vec<f64>> = rows
            .iter()
            .filter(|r| r[0] == id.to_string())
            .map(|r| r[1..].iter().map(|x| x.parse().unwrap()).collect())
            .collect();
        let m = circlefib::RMat::from_fn(4, pts.len(), |i, j| pts[j][i]);
        let sv = m.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[2] < 1e-9 * sv[0], "circle {id} is not planar: {sv:?}");
    }
}

#[test]
fn pointcloud_rejects_bad_projections() {
    assert_eq!(run(&["pointcloud", "--spec", &data("hopf_s5.json")]).status.code(), Some(3));
    let raw = run(&["pointcloud", "--spec", &data("hopf_s3.json"), "--projection", "none", "--circles", "1", "--points", "1"]);
    let first = &csv_rows(&raw)[0];
    let pole = first[1..].join(",");
    let out = run(&["pointcloud", "--spec", &data("hopf_s3.json"), "--circles", "1", &format!("--pole={pole}")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pole"));
    assert_eq!(run(&["pointcloud", "--spec", &data("hopf_s3.json"), "--pole", "1,0"]).status.code(), Some(2));
}

#[test]
fn out_file_written_whole_or_not_at_all() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("report.json");
    let ok = run(&["validate", "--spec", &data("hopf_s3.json"), "--out", target.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(ok.stdout.is_empty());
    let written = std::fs::read_to_string(&target).unwrap();
    assert_eq!(serde_json::from_str::<serde_json::Value>(&written).unwrap()["command"], "validate");

    let bad = run(&["validate", "--spec", &data("malformed.json"), "--out", target.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(&target).unwrap(), written);

    let fresh = dir.path().join("never.json");
    run(&["straighten", "--spec", &data("hopf_s3.json"), "--budget", "0", "--out", fresh.to_str().unwrap()]);
    assert!(!fresh.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
