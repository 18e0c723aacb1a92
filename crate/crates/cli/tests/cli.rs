use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rocvb::data::{save_csv, Dataset, Subject};
use rocvb::simlab::{generate, Study, StudyConfig};
use serde_json::Value;

fn rocvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocvb"))
        .args(args)
        .env_remove("ROC_SURFACE_THREADS")
        .output()
        .expect("binary runs")
}

fn sample(dir: &Path) -> PathBuf {
    let path = dir.join("data.csv");
    let ds = generate(&StudyConfig::new(Study::S1).with_n(300).with_seed(3), 0).unwrap();
    save_csv(&ds, &path).unwrap();
    path
}

fn complete(dir: &Path) -> PathBuf {
    let path = dir.join("complete.csv");
    let ds = generate(&StudyConfig::new(Study::S1).with_n(300).with_seed(3), 0).unwrap();
    let all = Dataset::new(
        ds.subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let class = s.class.unwrap_or(rocvb::data::Class::from_index(i % 3));
                Subject::new(s.t, s.a.clone(), true, Some(class))
            })
            .collect(),
    )
    .unwrap();
    save_csv(&all, &path).unwrap();
    path
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn tcf_reports_estimates_and_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let v = json(&rocvb(&["tcf", "--method", "spe", "--cut", "2,4", data.to_str().unwrap()]));
    let est = &v["estimates"][0];
    assert_eq!(est["method"], "SPE");
    assert_eq!(est["tcf"].as_array().unwrap().len(), 3);
    assert_eq!(est["asy_sd"].as_array().unwrap().len(), 3);
    let ci = est["ci"].as_array().unwrap();
    for (k, c) in ci.iter().enumerate() {
        let t = est["tcf"][k].as_f64().unwrap();
        assert!(c[0].as_f64().unwrap() < t && t < c[1].as_f64().unwrap());
    }
    assert!(est["ellipse"].as_array().unwrap().len() > 10);
}

#[test]
fn full_on_partial_verification_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let out = rocvb(&["tcf", "--method", "full", "--cut", "2,4", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("FULL requires complete verification"), "{err}");
}

#[test]
fn bad_flags_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let d = data.to_str().unwrap();
    for args in [
        vec!["tcf", "--cut", "4,2", d],
        vec!["tcf", "--method", "xyz", "--cut", "2,4", d],
        vec!["tcf", "--cut", "2,4", "--level", "1.5", d],
        vec!["surface", "--grid", "quantiles:x", d],
        vec!["tcf", "--cut", "2,4", "/nonexistent.csv"],
        vec!["simulate", "--study", "s3", "--lambda", "2"],
    ] {
        assert_eq!(rocvb(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sep.csv");
    let mut text = String::from("t,a1,v,d\n");
    for i in 0..30 {
        let class = i % 3 + 1;
        let t = class as f64 * 10.0 + (i as f64) * 0.01;
        let v = i % 2;
        let d = if v == 1 { class.to_string() } else { String::new() };
        text += &format!("{t},{},{v},{d}\n", (i % 5) as f64);
    }
    std::fs::write(&path, text).unwrap();
    let out = rocvb(&["vus", "--method", "fi", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn method_all_lists_skipped_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let v = json(&rocvb(&["vus", data.to_str().unwrap()]));
    let names: Vec<&str> = v["estimates"].as_array().unwrap().iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["FI", "MSI", "IPW", "SPE"]);
    assert_eq!(v["skipped"][0]["method"], "FULL");

    let data = complete(dir.path());
    let v = json(&rocvb(&["vus", data.to_str().unwrap()]));
    let names: Vec<&str> = v["estimates"].as_array().unwrap().iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["FULL", "FI", "MSI"]);
    assert_eq!(v["skipped"].as_array().unwrap().len(), 2);
}

#[test]
fn vus_table_with_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let out_path = dir.path().join("vus.csv");
    let out = rocvb(&["vus", "--boot", "30", "--seed", "7", "-o", out_path.to_str().unwrap(), data.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,estimate,asy_sd,boot_sd,ci_lo,ci_hi");
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6);
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().is_ok()), "{line}");
    }
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let d = data.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["vus", "--boot", "20", "--seed", "5", d],
        &["surface", "--method", "msi", "--grid", "quantiles:15", "--format", "csv", d],
        &["simulate", "--study", "s1", "--n", "150", "--reps", "6", "--boot", "5"],
    ];
    for args in runs {
        let reference = rocvb(args);
        assert!(reference.status.success(), "{}", String::from_utf8_lossy(&reference.stderr));
        for threads in ["1", "3"] {
            let mut with = vec!["--threads", threads];
            with.extend_from_slice(args);
            assert_eq!(rocvb(&with).stdout, reference.stdout, "{args:?} with {threads} threads");
        }
        let env = Command::new(env!("CARGO_BIN_EXE_rocvb"))
            .args(args)
            .env("ROC_SURFACE_THREADS", "2")
            .output()
            .unwrap();
        assert_eq!(env.stdout, reference.stdout);
    }
}

#[test]
fn surface_and_curve_grids() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let d = data.to_str().unwrap();
    let out = rocvb(&["surface", "--method", "ipw", "--grid", "2,4;2,5;4,7", "--format", "csv", d]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("method,c1,c2,tcf1,tcf2,tcf3\nIPW,2,4,"), "{text}");

    let v = json(&rocvb(&["curve", "--method", "fi", "--pair", "23", "--grid", "quantiles:9", d]));
    let pts = v["curves"][0]["points"].as_array().unwrap();
    assert_eq!(pts.len(), 9);
    let xs: Vec<f64> = pts.iter().map(|p| p["x"].as_f64().unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[0] <= w[1] + 1e-12));
}

#[test]
fn validate_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path());
    let v = json(&rocvb(&["validate", "--link", "probit", data.to_str().unwrap()]));
    assert_eq!(v["n"], 300);
    assert!(v["verification_rate"].as_f64().unwrap() > 0.0);
    assert_eq!(v["disease_model"]["status"], "ok");
    assert_eq!(v["verification_model"]["link"], "probit");
    assert_eq!(v["methods"][0]["available"], false);
}

#[test]
fn simulate_writes_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.csv");
    let out = rocvb(&[
        "simulate", "--study", "s1", "--lambda", "1", "--n", "200", "--reps", "5", "--seed", "42", "-o",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 4);
    assert!(text.starts_with("method,c1,c2,"));
}
