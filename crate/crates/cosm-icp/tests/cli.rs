#![allow(clippy::approx_constant)] // protocol's literal 6.28-radian bound

//! End-to-end tests of the command-line surface: exit codes, stdout
//! contracts, and file outputs.

use cosm_icp::pcd::{parse_pcd, write_pcd};
use cosm_icp::synthetic::uniform_box;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cosm-icp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_cloud(path: &Path, n: usize, seed: u64) {
    std::fs::write(path, write_pcd(&uniform_box(n, 0.5, seed))).unwrap();
}

#[test]
fn downsample_prints_counts_and_writes_pcd() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    let output = dir.path().join("out.pcd");
    write_cloud(&input, 500, 1);
    let out = run(&[
        "downsample",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
        "--leaf",
        "0.2",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let line = stdout(&out);
    let (n_in, n_out) = line.trim().split_once(" -> ").expect("count line");
    assert_eq!(n_in, "500");
    let n_out: usize = n_out.parse().unwrap();
    let (_, cloud) = parse_pcd(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(cloud.len(), n_out);
    assert!(n_out < 500);
}

#[test]
fn downsample_rejects_bad_leaf_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    write_cloud(&input, 10, 2);
    let out = run(&[
        "downsample",
        "--in",
        input.to_str().unwrap(),
        "--out",
        dir.path().join("o.pcd").to_str().unwrap(),
        "--leaf",
        "0",
    ]);
    assert_eq!(code(&out), 1);

    let out = run(&[
        "downsample",
        "--in",
        dir.path().join("nope.pcd").to_str().unwrap(),
        "--out",
        dir.path().join("o.pcd").to_str().unwrap(),
        "--leaf",
        "0.1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unsupported_pcd_encoding_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bin.pcd");
    std::fs::write(
        &input,
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n\
         WIDTH 1\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\nDATA binary\n",
    )
    .unwrap();
    let out = run(&["info", "--in", input.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported encoding"));
}

#[test]
fn unknown_flags_and_methods_are_usage_errors() {
    let out = run(&["downsample", "--bogus"]);
    assert_eq!(code(&out), 1);

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    write_cloud(&input, 20, 3);
    let out = run(&[
        "register",
        "--source",
        input.to_str().unwrap(),
        "--target",
        input.to_str().unwrap(),
        "--method",
        "icp-nonlinear",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn register_self_is_identity_with_machine_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.pcd");
    write_cloud(&input, 300, 4);
    let report = dir.path().join("report.json");
    let out = run(&[
        "register",
        "--source",
        input.to_str().unwrap(),
        "--target",
        input.to_str().unwrap(),
        "--method",
        "cosm",
        "--iters",
        "5",
        "--rmse-tol",
        "1e-12",
        "--json",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    let matrix: Vec<Vec<f64>> = lines[..4]
        .iter()
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    for (r, row) in matrix.iter().enumerate() {
        assert_eq!(row.len(), 4);
        for (c, &value) in row.iter().enumerate() {
            let expected = if r == c { 1.0 } else { 0.0 };
            assert!((value - expected).abs() <= 1e-9, "cell {r},{c}");
        }
    }
    let rmse: f64 = lines[4].strip_prefix("rmse ").unwrap().parse().unwrap();
    assert!(rmse <= 1e-12);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["converged"].as_bool().unwrap());
    assert!(!json["rmse_trace"].as_array().unwrap().is_empty());
    assert!(!json["rank_trace"].as_array().unwrap().is_empty());
}

#[test]
fn gen_transform_is_seed_deterministic_and_bounded() {
    let args = [
        "gen-transform",
        "--seed",
        "9",
        "--mode",
        "uniform",
        "--count",
        "5",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
    for line in stdout(&a).lines() {
        let vals: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!(vals.len(), 6);
        for angle in &vals[..3] {
            assert!(angle.abs() <= 6.28);
        }
        for trans in &vals[3..] {
            assert!(trans.abs() <= 10.0);
        }
    }
    let c = run(&["gen-transform", "--seed", "10", "--mode", "uniform"]);
    assert_ne!(stdout(&a).lines().next(), stdout(&c).lines().next());
}

#[test]
fn transform_applies_the_printed_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    let output = dir.path().join("out.pcd");
    write_cloud(&input, 50, 5);
    let out = run(&[
        "transform",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
        "--roll",
        "0.314",
        "--tz",
        "0.05",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let (_, original) = parse_pcd(&std::fs::read_to_string(&input).unwrap()).unwrap();
    let (_, moved) = parse_pcd(&std::fs::read_to_string(&output).unwrap()).unwrap();
    let expected = cosm_icp::EulerPose::new(0.314, 0.0, 0.0, 0.0, 0.0, 0.05)
        .to_transform()
        .apply(&original);
    for (a, b) in expected.iter().zip(moved.iter()) {
        assert!(a.dist_sq(*b).sqrt() < 1e-6);
    }
}

#[test]
fn inject_reports_the_rounded_count() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    let output = dir.path().join("out.pcd");
    write_cloud(&input, 200, 6);
    let out = run(&[
        "inject",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
        "--fraction",
        "0.1",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert_eq!(stdout(&out).trim(), "perturbed 20 of 200");
    let out = run(&[
        "inject",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
        "--fraction",
        "1.5",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bench_identity_plan_yields_machine_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.pcd");
    let records = dir.path().join("records.csv");
    write_cloud(&input, 150, 7);
    let out = run(&[
        "bench",
        "--in",
        input.to_str().unwrap(),
        "--methods",
        "cosm",
        "--runs",
        "1",
        "--iters",
        "3",
        "--mode",
        "uniform",
        "--angle-bound",
        "0",
        "--trans-bound",
        "0",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("method"), "summary table on stdout");
    let csv = std::fs::read_to_string(&records).unwrap();
    let records = cosm_icp::bench::parse_csv(&csv).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].final_rmse <= 1e-12);
}

#[test]
fn bench_is_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.pcd");
    write_cloud(&input, 120, 8);
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let out = run(&[
            "bench",
            "--in",
            input.to_str().unwrap(),
            "--runs",
            "3",
            "--iters",
            "5",
            "--seed",
            "123",
            "--no-timing",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bench_accepts_key_value_and_json_plans() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.pcd");
    write_cloud(&input, 100, 9);

    let kv_plan = dir.path().join("plan.txt");
    std::fs::write(
        &kv_plan,
        format!(
            "# tiny smoke plan\ninput = {}\nmethods = cosm,svd\nruns = 2\niterations = 4\n\
             mode = uniform\nangle_bound = 0.2\ntrans_bound = 0.1\nseed = 5\n",
            input.display()
        ),
    )
    .unwrap();
    let kv_out = dir.path().join("kv.csv");
    let out = run(&[
        "bench",
        "--plan",
        kv_plan.to_str().unwrap(),
        "--no-timing",
        "--out",
        kv_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");

    let json_plan = dir.path().join("plan.json");
    std::fs::write(
        &json_plan,
        serde_json::json!({
            "input": input.to_str().unwrap(),
            "methods": ["cosm", "svd"],
            "runs": 2,
            "iterations": 4,
            "sampler": {"mode": "uniform", "angle_bound": 0.2, "trans_bound": 0.1},
            "master_seed": 5,
        })
        .to_string(),
    )
    .unwrap();
    let json_out = dir.path().join("json.csv");
    let out = run(&[
        "bench",
        "--plan",
        json_plan.to_str().unwrap(),
        "--no-timing",
        "--out",
        json_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");

    // Same campaign through either plan format.
    assert_eq!(
        std::fs::read(&kv_out).unwrap(),
        std::fs::read(&json_out).unwrap()
    );

    let summary_out = dir.path().join("summary.json");
    let json_records = dir.path().join("records.json");
    let out = run(&[
        "bench",
        "--plan",
        json_plan.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        json_records.to_str().unwrap(),
        "--summary-out",
        summary_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_records).unwrap()).unwrap();
    assert_eq!(parsed["records"].as_array().unwrap().len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary_out).unwrap()).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 2);
}

#[test]
fn info_prints_point_count_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pcd");
    write_cloud(&input, 42, 10);
    let out = run(&["info", "--in", input.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("points 42\n"), "{text}");
    assert!(text.contains("\nmin ") && text.contains("\nmax ") && text.contains("\ndiagonal "));
}
