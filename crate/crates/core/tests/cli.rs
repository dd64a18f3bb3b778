use std::path::Path;
use std::process::{Command, Output};

use dlvkl::report::RunReport;

fn dlvkl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlvkl"))
        .args(args)
        .env("DLVKL_OUT", out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlvkl(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train"));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = dlvkl(&["train", "--data", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_settings_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "toy = step\nlearning_rat = 0.1\n").unwrap();
    let o = dlvkl(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn bad_value_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlvkl(&["train", "--toy", "step", "--beta", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn ragged_csv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "a,b,y\n1,2,3\n4,5\n").unwrap();
    let o = dlvkl(&["train", "--data", data.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn toy_train_writes_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = dlvkl(
        &["train", "--toy", "step", "--variant", "dlvkl", "--iterations", "30", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model.txt", "report.json", "trace.csv", "predictions.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let r = RunReport::read(&out.join("report.json")).unwrap();
    assert_eq!(r.dataset, "toy:step");
    assert_eq!(r.n_train, 50);
    assert!(r.metrics.rmse.unwrap().is_finite());
    assert!(r.collapse.is_some());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,elbo\n0,"));
    assert!(trace.lines().last().unwrap().starts_with("29,"));
}

#[test]
fn seed_range_uses_subdirectories_and_env_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlvkl(
        &["train", "--toy", "step", "--variant", "svgp", "--iterations", "5", "--seed", "0..1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for k in 0..2 {
        let r = RunReport::read(&dir.path().join(format!("seed-{k}/report.json"))).unwrap();
        assert_eq!(r.seed, k);
    }
}

#[test]
fn csv_regression_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut text = String::from("x1,x2,y\n");
    for i in 0..40 {
        let a = i as f64 / 10.0;
        text.push_str(&format!("{a},{},{}\n", (a * 3.0).cos(), a.sin()));
    }
    std::fs::write(&data, text).unwrap();
    let out = dir.path().join("run");
    let o = dlvkl(
        &[
            "train", "--data", data.to_str().unwrap(), "--variant", "dlvkl-nsde", "--iterations", "20",
            "--m", "8", "--flow-steps", "3", "--out", out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = RunReport::read(&out.join("report.json")).unwrap();
    assert_eq!(r.n_test, 4);
    assert_eq!(r.n_train, 36);
    assert_eq!(r.config.get("flow_steps").map(String::as_str), Some("3"));
}
