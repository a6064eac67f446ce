use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use polyseg_cli::{run_command, RunConfig, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_ORACLE};
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("polyseg").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn solve_cell_writes_profile_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 512}"#);
    let code = run(&["solve-cell", "0", "3.14159", "--config", &cfg, "--out", out.to_str().unwrap(), "--svg"]);
    assert_eq!(code, EXIT_OK);
    let s = summary(&out);
    let c = s["result"]["level"].as_f64().unwrap();
    let want = 8.0 * PI * PI / 3.0;
    assert!((c - want).abs() < 5e-3 * want, "{c}");
    let rows = csv_rows(&out.join("profile.csv"));
    assert_eq!(rows[0], vec!["t", "w_1"]);
    assert_eq!(rows.len(), 513);
    assert!(fs::read_to_string(out.join("profile.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn summaries_revalidate_against_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256, "couplings": {"ell": 2, "mu": [1.0, 1.5], "lambda": -2.0}}"#);
    assert_eq!(run(&["solve-system", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]), EXIT_OK);
    let s = summary(&out);
    let back = RunConfig::parse(&s["config"].to_string()).unwrap();
    assert_eq!(back.seed, 4);
    assert_eq!(back.solver.seed, 4);
    assert_eq!(back.couplings.mu, Some(vec![1.0, 1.5]));
    let rows = csv_rows(&out.join("profile.csv"));
    assert!(rows.iter().all(|r| r.len() == 3));
    assert_eq!(rows.len(), 257);
    let gap = s["result"]["nehari_identity_gap"].as_f64().unwrap();
    assert!(gap < 1e-8 * s["result"]["report"]["energy"].as_f64().unwrap());
}

#[test]
fn symmetric_partition_is_centred() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"params": {"N": 3, "m": 1, "n1": 2, "n2": 2}, "grid": 256}"#);
    assert_eq!(run(&["optimal-partition", "--ell", "2", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let s = summary(&out);
    let a = s["result"]["points"][0].as_f64().unwrap();
    assert!((a - PI / 2.0).abs() <= 2.0 * PI / 256.0);
    assert_eq!(s["result"]["labels"][0], "S^1×B^2");
    assert!(csv_rows(&out.join("profile.csv")).iter().all(|r| r.len() == 3));
}

#[test]
fn sweep_writes_energy_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256, "sweep": {"base": 4.0, "steps": 3}}"#);
    assert_eq!(run(&["sweep-lambda", "--config", &cfg, "--out", out.to_str().unwrap(), "--svg"]), EXIT_OK);
    let rows = csv_rows(&out.join("energies.csv"));
    assert_eq!(rows[0], vec!["lambda", "energy", "overlap_12"]);
    assert_eq!(rows.len(), 4);
    let s = summary(&out);
    let steps = s["result"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|st| st["overlap_bound_holds"] == true));
    assert!(out.join("energies.svg").exists());
}

#[test]
fn orbit_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256}"#);
    assert_eq!(run(&["verify", "--suite", "orbit", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let reports: Value = serde_json::from_str(&fs::read_to_string(out.join("oracles.json")).unwrap()).unwrap();
    assert!(!reports.as_array().unwrap().is_empty());
    assert_eq!(summary(&out)["result"]["pass"], true);
}

#[test]
fn literal_sign_fails_the_orbit_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256, "convention": "paper_literal"}"#);
    assert_eq!(run(&["verify", "--suite", "orbit", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_ORACLE);
    assert_eq!(summary(&out)["result"]["pass"], false);
}

#[test]
fn malformed_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"grid\": 256,\n  \"colour\": 1\n}");
    assert_eq!(run(&["solve-cell", "0", "1", "--config", &cfg, "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["solve-cell", "0", "1", "--config", "/nonexistent/config.json", "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["solve-cell", "1", "0.5", "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["verify", "--suite", "everything", "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["optimal-partition", "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["solve-cell", "0", "1", "--euclidean-ray", "1,0", "--out", o]), EXIT_INVALID);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn nonconvergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256, "solver": {"max_iters": 2}}"#);
    assert_eq!(run(&["solve-cell", "0.5", "2.5", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_NOT_CONVERGED);
}

#[test]
fn euclidean_ray_is_sampled() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"grid": 256}"#);
    let code = run(&["solve-cell", "0", "3.14159", "--config", &cfg, "--out", out.to_str().unwrap(), "--euclidean-ray", "0,0,1,1"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out.join("ray.csv"));
    assert_eq!(rows[0], vec!["r", "u_1"]);
    assert_eq!(rows.len(), polyseg_cli::RAY_RADII + 1);
    // a constant profile pulls back to a radially decreasing bubble
    let values: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"grid": 256, "couplings": {"lambda": -4.0}, "solver": {"multistart": 2}}"#);
    let files = ["summary.json", "profile.csv", "profile.svg"];
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let o = out.to_str().unwrap().to_string();
        assert_eq!(run(&["solve-system", "--config", &cfg, "--out", &o, "--seed", "17", "--svg", "--jobs", "2"]), EXIT_OK);
        outputs.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    // the output directory is part of the echoed configuration
    let strip = |b: &[u8]| String::from_utf8(b.to_vec()).unwrap().replace("run0", "run").replace("run1", "run");
    assert_eq!(strip(&outputs[0][0]), strip(&outputs[1][0]));
    assert_eq!(outputs[0][1], outputs[1][1]);
    assert_eq!(outputs[0][2], outputs[1][2]);
}
