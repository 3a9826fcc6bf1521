use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapelift"))
        .args(args)
        .current_dir(fixture(""))
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout(&out)
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn distance(args: &[&str]) -> f64 {
    ok(args).trim().parse().unwrap()
}

#[test]
fn distance_of_identical_files_is_zero() {
    for kind in ["rotation", "reflection", "rr"] {
        assert_eq!(ok(&["distance", "arc.csv", "arc.csv", "--kind", kind]).trim(), "0.000000000000");
    }
}

#[test]
fn distance_to_reverse_labeled_copy_vanishes_only_under_rr() {
    assert_eq!(distance(&["distance", "arc.csv", "arc_reversed.csv", "--kind", "rr"]), 0.0);
    assert!(distance(&["distance", "arc.csv", "arc_reversed.csv", "--kind", "reflection"]) > 0.1);
}

#[test]
fn distance_ignores_similarity_and_honours_reflection() {
    // arc_moved is a reflected, rotated, scaled and shifted copy of arc.
    assert_eq!(distance(&["distance", "arc.csv", "arc_moved.csv", "--kind", "reflection"]), 0.0);
    assert!(distance(&["distance", "arc.csv", "arc_moved.csv", "--kind", "rotation"]) > 0.5);
}

#[test]
fn distance_matches_golden_value() {
    // Frozen from the complex-coordinate formula, which agrees with the SVD path.
    for kind in ["rotation", "reflection", "rr"] {
        assert_eq!(ok(&["distance", "arc.csv", "buckle.csv", "--kind", kind]).trim(), "0.159879066859");
    }
    assert_eq!(ok(&["distance", "arc.csv", "buckle.json"]).trim(), "0.159879066859");
}

#[test]
fn mean_report_and_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mean.json");
    let text = ok(&["mean", "group_w.csv", "--kind", "rr", "--output", out.to_str().unwrap()]);
    let report: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["samples"], 30);
    assert!(report["residual"].as_f64().unwrap() <= 1e-9);
    let mean = report["mean"].as_array().unwrap();
    assert_eq!(mean.len(), 5);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["landmarks"], report["mean"]);
    // The mean sits close to the template the sample was drawn from.
    let d = distance(&["distance", out.to_str().unwrap(), "arc.csv", "--kind", "rr"]);
    assert!(d < 0.05, "{d}");
}

#[test]
fn mean_of_identical_samples_is_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mean.csv");
    let report = dir.path().join("report.json");
    let text = ok(&[
        "mean",
        "identical.csv",
        "--kind",
        "reflection",
        "--output",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(text.is_empty());
    assert!(std::fs::read_to_string(&report).unwrap().contains("\"converged\": true"));
    assert!(distance(&["distance", out.to_str().unwrap(), "arc.csv"]) < 1e-9);
}

#[test]
fn mean_flag_and_data_errors() {
    assert_eq!(code(&["mean", "group_w.csv", "--tol", "0"]), 64);
    assert_eq!(code(&["mean", "group_w.csv", "--max-iter", "0"]), 64);
    assert_eq!(code(&["mean", "malformed.csv"]), 65);
    assert_eq!(code(&["mean", "missing.csv"]), 65);
}

fn outcomes(text: &str) -> Vec<Value> {
    let report: Value = serde_json::from_str(text).unwrap();
    report["outcomes"].as_array().unwrap().clone()
}

#[test]
fn test_rejects_distinct_templates() {
    let text = ok(&["test", "group_w.csv", "group_far.csv", "--kind", "rr", "--bootstrap", "200"]);
    let outs = outcomes(&text);
    assert_eq!(outs.len(), 4);
    assert!(outs.iter().all(|o| o["reject"] == true));
}

#[test]
fn test_keeps_equal_templates_and_is_seeded() {
    let args = ["test", "group_w.csv", "group_z.csv", "--kind", "rr", "--seed", "5", "--variant", "individual"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let outs = outcomes(&first);
    assert_eq!(outs.len(), 1);
    assert_eq!(outs[0]["reject"], false);
    assert_eq!(outs[0]["resamples"], 1000);
}

#[test]
fn test_quantile_calibration() {
    let outs = outcomes(&ok(&[
        "test",
        "group_w.csv",
        "group_z.csv",
        "--calibration",
        "quantile",
        "--variant",
        "pooled_tangent,individual_asymmetric",
    ]));
    assert_eq!(outs.len(), 2);
    assert_eq!(outs[0]["calibration"], "quantile");
    assert!(outs[0]["p_value"].as_f64().unwrap() > 0.05);
}

#[test]
fn test_exit_codes() {
    // Zero spread in both groups: singular covariance.
    assert_eq!(code(&["test", "identical.csv", "identical.csv", "--bootstrap", "200"]), 2);
    assert_eq!(code(&["test", "group_w.csv", "group_z.csv", "--alpha", "1.5"]), 64);
    assert_eq!(code(&["test", "group_w.csv", "group_z.csv", "--bootstrap", "50"]), 64);
    assert_eq!(code(&["test", "group_w.csv", "group_z.csv", "--variant", "nope"]), 64);
    assert_eq!(code(&["test", "group_w.csv", "triangles.csv"]), 65);
}

#[test]
fn simulate_writes_table_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let table = ok(&["simulate", "study.json", "--curve", curve.to_str().unwrap()]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,calibration,n,m,separation,rejections,replicates,failures,excluded,rate");
    assert_eq!(lines.len(), 1 + 4 * 2);
    let curve = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(curve.starts_with("separation,pooled_tangent_bootstrap_n12_m12"));
}

#[test]
fn simulate_toml_with_overrides() {
    let table = ok(&["simulate", "study.toml", "--replicates", "3", "--seed", "9", "--noise-sd", "0.1"]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(6) == Some("3")));
    assert!(rows.iter().any(|r| r.contains(",quantile,")));
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let a = ok(&["--strict", "simulate", "study.json"]);
    let b = ok(&["--threads", "3", "simulate", "study.json"]);
    assert_eq!(a, b);
}

#[test]
fn simulate_errors() {
    assert_eq!(code(&["simulate", "study_bad.json"]), 65);
    assert_eq!(code(&["simulate", "study.json", "--bootstrap", "10"]), 64);
    assert_eq!(code(&["simulate", "study.json", "--replicates", "0"]), 64);
}

#[test]
fn landmarks_of_sine_hump() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.json");
    let csv = ok(&["landmarks", "polylines.csv", "--audit", audit.to_str().unwrap()]);
    let sine: Vec<Vec<f64>> = csv
        .lines()
        .filter(|l| l.starts_with("sine,"))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(sine.len(), 5);
    assert!((sine[2][0] - std::f64::consts::FRAC_PI_2).abs() < 0.02);
    assert!(sine[0][0].abs() < 1e-12 && (sine[4][0] - std::f64::consts::PI).abs() < 1e-12);
    let audit: Value = serde_json::from_str(&std::fs::read_to_string(audit).unwrap()).unwrap();
    let audit = audit.as_array().unwrap();
    assert_eq!(audit.len(), 3);
    assert_eq!(audit[0]["curve"], "sine");
    assert_eq!(audit[0]["indices"][4], 200);
}

#[test]
fn landmarks_output_reads_back_as_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("landmarks.csv");
    ok(&["landmarks", "polylines.csv", "--step", "0.02", "--max-shift", "0", "--output", out.to_str().unwrap()]);
    let report: Value = serde_json::from_str(&ok(&["mean", out.to_str().unwrap(), "--kind", "rr"])).unwrap();
    assert_eq!(report["samples"], 3);
}

#[test]
fn landmarks_errors() {
    assert_eq!(code(&["landmarks", "straight.csv"]), 65);
    assert_eq!(code(&["landmarks", "polylines.csv", "--resolution", "5"]), 64);
    assert_eq!(code(&["landmarks", "polylines.csv", "--max-shift", "-1"]), 64);
    assert_eq!(code(&["landmarks", "polylines.csv", "--step", "0.1", "--resolution", "50"]), 64);
}

fn hopf_points(text: &str) -> Vec<[f64; 3]> {
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn hopf_points_lie_on_unit_sphere() {
    let points = hopf_points(&ok(&["hopf", "triangles.csv"]));
    assert_eq!(points.len(), 20);
    for p in points {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn hopf_folds_into_quotient_regions() {
    let reflection = hopf_points(&ok(&["hopf", "triangles.csv", "--kind", "reflection"]));
    assert!(reflection.iter().all(|p| p[1] >= 0.0));
    let rr = hopf_points(&ok(&["hopf", "triangles.csv", "--kind", "rr"]));
    assert!(rr.iter().all(|p| p[1] >= 0.0 && 0.5 * p[0] + 0.75f64.sqrt() * p[2] >= -1e-15));
}

#[test]
fn hopf_errors() {
    assert_eq!(code(&["hopf", "group_w.csv"]), 65);
    assert_eq!(code(&["hopf", "malformed.csv"]), 65);
    assert_eq!(code(&["hopf", "triangles.csv", "--kind", "circle"]), 64);
}

#[test]
fn usage_and_help() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["distance", "--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 64);
    assert_eq!(code(&["distance", "arc.csv"]), 64);
    assert_eq!(code(&["--threads", "0", "distance", "arc.csv", "arc.csv"]), 64);
}
