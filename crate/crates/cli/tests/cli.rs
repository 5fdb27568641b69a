use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use plrnn_dyn::dynamics::simulate;
use plrnn_dyn::{Map2D, PlModel};
use serde_json::Value;
use tempfile::TempDir;

const CHAOTIC: &str = r#"{"variant": "general-2d", "a_l": -1.77, "a_r": 1.5, "b_l": -0.9, "b_r": -0.75, "c": 0.6, "d": 0.15, "h1": -0.7, "h2": -0.4}"#;
const BISTABLE: &str = r#"{"variant": "general-2d", "a_l": -1.77, "a_r": 0.3, "b_l": -0.9, "b_r": -0.75, "c": 0.6, "d": 0.15, "h1": -0.7, "h2": -0.4}"#;
const CONTRACTING: &str = r#"{"variant": "general-2d", "a_l": 0.5, "a_r": 0.4, "b_l": -0.1, "b_r": -0.1, "c": 0.1, "d": 0.2, "h1": -0.3, "h2": 0.1}"#;
const STANDARD: &str = r#"{"variant": "standard", "A": [0.5, 0.3], "W": [[0, 0.1], [0.1, 0]], "h1": [0.1, 0.2]}"#;

fn pldyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pldyn")).args(args).output().expect("binary runs")
}

fn model_file(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fixed_points_lists_the_chaotic_map_saddle() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let out = dir.path().join("out");
    let r = pldyn(&["fixed-points", "--model", s(&m), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v = json(&out.join("cycles.json"));
    let found = v["cycles"].as_array().unwrap().iter().any(|c| {
        let ev: Vec<f64> = c["eigenvalues"].as_array().unwrap().iter().map(|e| e[0].as_f64().unwrap()).collect();
        c["stability"] == "saddle" && c["period"] == 1 && (ev[0] + 1.4277).abs() < 5e-4 && (ev[1] + 0.1922).abs() < 5e-4
    });
    assert!(found);
    assert!(v["provenance"]["model_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn malformed_model_leaves_no_output() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "bad.json", r#"{"variant":"standard","A":[0.5,0.3],"W":[[0,1,2],[1,0,2]],"h1":[0,0]}"#);
    let out = dir.path().join("out");
    let r = pldyn(&["fixed-points", "--model", s(&m), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!r.stderr.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = pldyn(&["fixed-points", "--bogus"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn missing_model_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let r = pldyn(&["fixed-points", "--model", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn manifold_csv_reaches_the_stable_fold() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let out = dir.path().join("out");
    let r = pldyn(&["manifold", "--model", s(&m), "--out", s(&out), "--regions", "0", "--box=-5:5", "--max-iters", "8"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let best = csv_rows(&out.join("manifold.csv"))
        .iter()
        .map(|row| {
            let x: f64 = row[3].parse().unwrap();
            let y: f64 = row[4].parse().unwrap();
            (x * x + (y - 0.59343).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best < 5e-4, "closest point at {best}");
    let text = fs::read_to_string(out.join("manifold.csv")).unwrap();
    assert!(text.starts_with("segment,depth,region,x0,x1\n"));
    assert!(text.lines().last().unwrap().starts_with("# model_sha256="));
    assert!(json(&out.join("segments.json"))["segments"].as_array().unwrap().len() > 1);
}

#[test]
fn manifold_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = pldyn(&[
            "manifold", "--model", s(&m), "--out", s(&out), "--regions", "0", "--box=-5:5", "--fallback", "--seeds", "500",
            "--seed", "7",
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        (fs::read(out.join("manifold.csv")).unwrap(), fs::read(out.join("segments.json")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn unstable_side_of_an_attractor_fails() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", STANDARD);
    let out = dir.path().join("out");
    let r = pldyn(&["manifold", "--model", s(&m), "--out", s(&out), "--regions", "11", "--side", "unstable"]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.join("manifold.csv").exists());
}

#[test]
fn homoclinic_report_for_chaotic_map() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let out = dir.path().join("out");
    let r = pldyn(&["homoclinic", "--model", s(&m), "--out", s(&out)]);
    assert!(r.status.success());
    let v = json(&out.join("homoclinic.json"));
    assert_eq!(v["verdict"], "intersection-case-i");
    assert!((v["det_product"].as_f64().unwrap() - 0.18529).abs() < 5e-4);
    assert!((v["case_ii"]["product"].as_f64().unwrap() + 1.0269).abs() < 5e-4);
    assert!((v["case_ii"]["side_product"].as_f64().unwrap() - 0.51606).abs() < 5e-4);
}

#[test]
fn homoclinic_report_is_recomputable_from_the_model() {
    // the stable eigenvalue of A_L + diag(0, d), solved as a 2x2 quadratic here
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let out = dir.path().join("out");
    assert!(pldyn(&["homoclinic", "--model", s(&m), "--out", s(&out)]).status.success());
    let v = json(&out.join("homoclinic.json"));
    let (a, b, c, d) = (-1.77f64, -0.9f64, 0.6f64, 0.15f64);
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr - 4.0 * det).sqrt();
    let roots = [(tr + disc) / 2.0, (tr - disc) / 2.0];
    let ls = roots.iter().copied().find(|r: &f64| r.abs() < 1.0).unwrap();
    let lu = roots.iter().copied().find(|r: &f64| r.abs() > 1.0).unwrap();
    assert!((v["lambda_s"].as_f64().unwrap() - ls).abs() < 1e-12);
    assert!((v["lambda_u"].as_f64().unwrap() - lu).abs() < 1e-12);
    let det_r = 1.5 * d - (-0.75) * c;
    assert!((v["det_product"].as_f64().unwrap() - det * det_r).abs() < 1e-12);
}

#[test]
fn homoclinic_without_saddle_reports_none() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CONTRACTING);
    let out = dir.path().join("out");
    assert!(pldyn(&["homoclinic", "--model", s(&m), "--out", s(&out)]).status.success());
    assert_eq!(json(&out.join("homoclinic.json"))["verdict"], "none-within-budget");
}

#[test]
fn homoclinic_rejects_non_2d_models() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", STANDARD);
    let out = dir.path().join("out");
    let r = pldyn(&["homoclinic", "--model", s(&m), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(!out.exists());
}

#[test]
fn sweep_shows_the_border_collision() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let out = dir.path().join("out");
    let r = pldyn(&[
        "sweep", "--model", s(&m), "--out", s(&out), "--sweep", "h1:-0.8:0.4:121", "--init", "0.1,0.1", "--transient", "2000",
        "--record", "1000",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v = json(&out.join("sweep.json"));
    let changes: Vec<f64> = v["regime_changes"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(changes.iter().any(|c| (c - 0.282).abs() < 0.01), "{changes:?}");
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.starts_with("value,x0,x1\n"));
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 121 * 1000);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let r = pldyn(&["sweep", "--model", s(&m), "--out", s(dir.path()), "--sweep", "zz:0:1:3"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn basin_has_two_attractors_on_the_bistable_map() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", BISTABLE);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let r = pldyn(&["basin", "--model", s(&m), "--out", s(&out), "--grid=-4:4:-5:4:80", "--threads", threads]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        out
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let v = json(&a.join("basin.json"));
    let labels: Vec<&str> = v["labels_present"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(labels.contains(&"0") && labels.contains(&"1"), "{labels:?}");
    assert_eq!(csv_rows(&a.join("basin.csv")).len(), 80 * 80);
    assert_eq!(fs::read(a.join("basin.csv")).unwrap(), fs::read(b.join("basin.csv")).unwrap());
}

#[test]
fn metrics_vanish_for_the_generating_model() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let model = PlModel::general_2d(Map2D { a_l: -1.77, a_r: 1.5, b_l: -0.9, b_r: -0.75, c: 0.6, d: 0.15, h1: -0.7, h2: -0.4 });
    let tr = simulate(&model, &DVector::from_vec(vec![0.1, 0.1]), 3000, 1000).unwrap();
    let mut text = String::from("x0,x1\n");
    for z in &tr.states {
        text.push_str(&format!("{},{}\n", z[0], z[1]));
    }
    let t = dir.path().join("true.csv");
    fs::write(&t, text).unwrap();
    let out = dir.path().join("out");
    let r = pldyn(&["metrics", "--model", s(&m), "--out", s(&out), "--true", s(&t), "--generated", s(&t), "--horizons", "1,5"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v = json(&out.join("metrics.json"));
    assert_eq!(v["d_stsp"].as_f64().unwrap(), 0.0);
    for pe in v["prediction_error"].as_array().unwrap() {
        assert_eq!(pe["pe"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn metrics_reject_non_numeric_rows() {
    let dir = TempDir::new().unwrap();
    let m = model_file(&dir, "m.json", CHAOTIC);
    let t = dir.path().join("true.csv");
    fs::write(&t, "x0,x1\n0.1,abc\n").unwrap();
    let out = dir.path().join("out");
    let r = pldyn(&["metrics", "--model", s(&m), "--out", s(&out), "--true", s(&t)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}
