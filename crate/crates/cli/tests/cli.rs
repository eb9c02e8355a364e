use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treecert")).args(args).output().unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn analyze_then_verify_on_the_toy_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "analyze", "--model", &fixture("toy_tree.json"), "--threat-json", &fixture("toy_threat.json"),
        "--out", &p(dir.path(), "a"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let attacks = json(dir.path().join("a/attacks.json"));
    assert_eq!(attacks["attacks"].as_array().unwrap().len(), 6);
    for f in ["region.json", "telemetry.json", "config.json"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }

    let out = run(&[
        "verify", "--model", &fixture("toy_tree.json"), "--data", &fixture("toy_data.libsvm"),
        "--threat-json", &fixture("toy_threat.json"), "--region", &p(dir.path(), "a/region.json"),
        "--epsilon", "0.5", "--epsilon", "0", "--out", &p(dir.path(), "v"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("v/report.json"));
    let at = |i: usize, k: &str| (report[i][k]["count"].as_u64().unwrap(), report[i][k]["total"].as_u64().unwrap());
    assert_eq!(at(0, "a"), (3, 3));
    assert_eq!(at(0, "r"), (2, 3));
    assert_eq!(at(0, "r_hat"), (2, 3));
    assert_eq!(at(0, "resilience_hat"), (1, 3));
    assert_eq!(at(1, "resilience_hat"), at(1, "r_hat"));

    let csv = std::fs::read_to_string(dir.path().join("v/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("dataset,model,b,epsilon,a,r,r_hat,R_hat"));
    assert_eq!(lines.count(), 2);

    let config = json(dir.path().join("v/config.json"));
    assert_eq!(config["args"]["command"]["command"], "verify");
    assert!(config["argv"].as_array().unwrap().len() > 5);
}

#[test]
fn region_is_computed_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify", "--model", &fixture("toy_tree.json"), "--data", &fixture("toy_data.libsvm"),
        "--delta", "1", "--budget", "1", "--epsilon", "0.5", "--no-exact", "--out", &p(dir.path(), "v"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("v/report.json"));
    assert_eq!(report[0]["r_hat"]["count"], 2);
    assert!(report[0]["r"].is_null());
}

#[test]
fn perturb_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str| {
        let out = run(&[
            "perturb", "--model", &fixture("forest7.json"), "--data", &fixture("forest7_test.libsvm"),
            "--delta", "0.05", "--budget", "1", "--epsilon", "0.02", "--sets", "20", "--seed", "3",
            "--out", &p(dir.path(), name),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(dir.path().join(name).join("perturb.csv")).unwrap()
    };
    let first = go("one");
    let csv_rows = |s: &str| s.lines().map(|l| l.rsplitn(3, ',').nth(2).unwrap().to_string()).collect::<Vec<_>>();
    // Timing columns aside, two runs agree.
    assert_eq!(csv_rows(&first), csv_rows(&go("two")));
    assert!(dir.path().join("one/worst_eps0.02.libsvm").is_file());
}

#[test]
fn gen_writes_model_and_data() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "m.json");
    let data = p(dir.path(), "d.libsvm");
    let out = run(&[
        "gen", "--trees", "3", "--depth", "2", "--features", "3", "--seed", "1", "--out", &model,
        "--instances", "10", "--data-out", &data,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&model)["trees"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 10);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify", "--model", "no/such/model.json", "--data", &fixture("toy_data.libsvm"),
        "--delta", "1", "--budget", "1", "--epsilon", "0.5", "--out", &p(dir.path(), "v"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.json"));
}

#[test]
fn malformed_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.json");
    std::fs::write(&bad, r#"{"version": 1, "labels": [-1, 1], "trees": [{"feature": 0}]}"#).unwrap();
    let out = run(&["analyze", "--model", &bad, "--delta", "1", "--budget", "1", "--out", &p(dir.path(), "a")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = p(dir.path(), "a");
    let model = fixture("toy_tree.json");
    for args in [
        vec!["analyze", "--model", &model, "--out", &out_dir],
        vec!["analyze", "--model", &model, "--delta", "1", "--out", &out_dir],
        vec!["analyze", "--model", &model, "--delta", "1", "--budget", "1", "--iterations", "lots", "--out", &out_dir],
        vec!["analyze", "--model", &model, "--delta", "1", "--budget", "1", "--split-fraction", "0", "--out", &out_dir],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}
