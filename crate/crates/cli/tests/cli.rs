use std::path::Path;
use std::process::{Command, Output};

fn gppf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gppf")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr is not empty");
    serde_json::from_str(line).expect("stderr ends with a JSON error")
}

fn make_feeder(dir: &Path) -> String {
    let path = dir.join("feeder.txt");
    let out = gppf(&["gen-feeder", "--buses", "15", "--ders", "4", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn reruns_produce_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = make_feeder(dir.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = gppf(&[
            "run-case", "--feeder", &feeder, "--train-hours", "24", "--test-hours", "24", "--epochs", "5", "--seed",
            "4", "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(std::fs::read(out_dir.join("reports.csv")).unwrap());
        assert!(out_dir.join("timings.csv").is_file());
    }
    assert_eq!(reports[0], reports[1]);

    let case = dir.path().join("a");
    let out = gppf(&["emit-plots", "--dir", case.to_str().unwrap(), "--kind", "time-series-3phase", "--bus", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!case.join("plots").join("time-series-3phase.csv").exists());

    for kind in ["voltage-profile-snapshot", "per-bus-mae", "time-series-3phase"] {
        let out = gppf(&["emit-plots", "--dir", case.to_str().unwrap(), "--kind", kind]);
        assert!(out.status.success(), "{kind}");
        assert!(case.join("plots").join(format!("{kind}.csv")).is_file());
    }
}

#[test]
fn unknown_model_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("case");
    let out = gppf(&[
        "run-case", "--feeder", "does-not-exist.txt", "--case", "1", "--models", "GP,SVM", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "invalid-argument");
    assert!(e["error"]["message"].as_str().unwrap().contains("SVM"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_plot_kind_and_missing_case_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = gppf(&["emit-plots", "--dir", d, "--kind", "heatmap"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "invalid-argument");

    let out = gppf(&["emit-plots", "--dir", d, "--kind", "per-bus-mae"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "artifact");
}

#[test]
fn bad_flags_and_bad_cases_are_structured_errors() {
    let out = gppf(&["run-case", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "invalid-argument");

    let dir = tempfile::tempdir().unwrap();
    let feeder = make_feeder(dir.path());
    let out = gppf(&["run-case", "--feeder", &feeder, "--case", "7", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_and_builtin_feeder_generation() {
    let dir = tempfile::tempdir().unwrap();
    let f123 = dir.path().join("ieee123.txt");
    let out = gppf(&["gen-feeder", "--ieee123", "--out", f123.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("278 phase-nodes"));

    let data = dir.path().join("data");
    let out = gppf(&[
        "gen-data", "--feeder", f123.to_str().unwrap(), "--hours", "6", "--seed", "2", "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["inputs.csv", "targets.csv", "angles.csv", "manifest.json"] {
        assert!(data.join(f).is_file());
    }

    let gen = dir.path().join("gen");
    let out = gppf(&[
        "run-generalization", "--feeder", "builtin:ieee123", "--train-hours", "12", "--test-hours", "12", "--out",
        gen.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(gen.join("generalization.csv").is_file());
}
