use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structcov"))
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn structcov")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn cutoff_default_grid_has_forty_rows() {
    let o = run(&["--quiet", "cutoff"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 41);
    assert!(lines.contains(&"10,0.05,24.246"));
    assert!(lines.contains(&"1,0.50,1.548"));
    assert!(stderr(&o).is_empty());
}

#[test]
fn invocation_echo_lists_defaults() {
    let o = run(&["cutoff", "--dim", "2"]);
    let err = stderr(&o);
    assert!(err.contains("\"verb\":\"cutoff\""));
    assert!(err.contains("\"breakdown\":[0.05,0.1"));
    assert!(err.contains("\"format\":\"csv\""));
}

#[test]
fn breakdown_out_of_range_is_usage_error() {
    for bad in ["0", "0.51", "-0.1"] {
        let o = run(&["cutoff", "--breakdown", bad]);
        assert_eq!(o.status.code(), Some(2), "breakdown {bad}");
    }
}

#[test]
fn scalars_json_full_precision() {
    let o = run(&[
        "--format",
        "json",
        "scalars",
        "--dim",
        "10",
        "--breakdown",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_id"], "structcov.scalars.v1");
    let are = v["are_scale"].as_f64().unwrap();
    assert!((are - 0.965).abs() < 2e-3);
    assert_ne!(are, (are * 1000.0).round() / 1000.0);
}

#[test]
fn tradeoff_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = run(&[
        "--quiet",
        "tradeoff",
        "--dim",
        "2",
        "--grid",
        "0.2:0.5:0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let curve = std::fs::read_to_string(&out).unwrap();
    assert_eq!(curve.lines().count(), 8);
    assert!(curve.starts_with("k,breakdown,c,are_regression"));
    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("curve.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["schema_id"], "structcov.tradeoff-summary.v1");
    assert_eq!(summary["argmin"].as_array().unwrap().len(), 3);
    assert!(stdout(&o).starts_with("index,k,breakdown"));
}

#[test]
fn bad_grid_is_usage_error() {
    let o = run(&["tradeoff", "--grid", "0.1:0.9:0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_csv_and_json_data_agree() {
    let spec = data("compound_symmetry_3.json");
    let fits: Vec<Value> = ["cs3_regression.csv", "cs3_regression.json"]
        .iter()
        .map(|f| {
            let o = run(&[
                "--quiet",
                "--format",
                "json",
                "fit",
                "--data",
                data(f).to_str().unwrap(),
                "--structure",
                spec.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            serde_json::from_str(&stdout(&o)).unwrap()
        })
        .collect();
    assert_eq!(fits[0]["fit"]["theta"], fits[1]["fit"]["theta"]);
    assert_eq!(fits[0]["schema_id"], "structcov.fit.v1");
    assert_eq!(fits[0]["theta_std_errors"].as_array().unwrap().len(), 2);
}

#[test]
fn fit_non_convergence_exits_three_with_result() {
    let o = run(&[
        "--quiet",
        "fit",
        "--data",
        data("cs3_regression.csv").to_str().unwrap(),
        "--structure",
        "compound-symmetry:3",
        "--family",
        "s-rho",
        "--breakdown",
        "0.5",
        "--max-iter",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("converged,false"));
}

#[test]
fn fit_rejects_malformed_data_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y_1,y_2\n1,2\n3,oops\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        path.to_str().unwrap(),
        "--structure",
        "unstructured:2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv:3:"), "{}", stderr(&o));
}

#[test]
fn fit_dimension_mismatch_is_usage_error() {
    let o = run(&[
        "fit",
        "--data",
        data("cs3_regression.csv").to_str().unwrap(),
        "--structure",
        "unstructured:2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn influence_point_csv() {
    let o = run(&[
        "--quiet",
        "influence",
        "--dim",
        "2",
        "--breakdown",
        "0.5",
        "--point",
        "3,-1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("target,component,value\n"));
    assert_eq!(out.lines().filter(|l| l.starts_with("scale,")).count(), 1);
}

#[test]
fn simulate_radial_is_seed_deterministic() {
    let args = [
        "--quiet",
        "--format",
        "json",
        "simulate",
        "--experiment",
        "radial",
        "--replicates",
        "5000",
        "--seed",
        "9",
    ];
    let a = run(&args);
    let b = bin()
        .args(args)
        .env("STRUCTCOV_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    let v: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["schema_id"], "structcov.simulate-radial.v1");
}

#[test]
fn simulate_tolerance_breach_exits_four() {
    let o = run(&[
        "--quiet",
        "simulate",
        "--experiment",
        "radial",
        "--replicates",
        "200",
        "--tolerance",
        "1e-6",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("max_rel_err"));
}

#[test]
fn simulate_limit_location_model() {
    let o = run(&[
        "--quiet",
        "simulate",
        "--experiment",
        "limit",
        "--structure",
        "unstructured:2",
        "--theta",
        "1,0.3,1.5",
        "--location",
        "--n",
        "100",
        "--replicates",
        "200",
        "--tolerance",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("family,gaussian-ml"));
}

#[test]
fn simulate_invalid_sigma_is_usage_error() {
    let o = run(&[
        "simulate",
        "--experiment",
        "radial",
        "--sigma1",
        "1",
        "--sigma2",
        "-0.7",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_env_is_usage_error() {
    let o = bin()
        .args(["cutoff", "--dim", "1"])
        .env("STRUCTCOV_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
