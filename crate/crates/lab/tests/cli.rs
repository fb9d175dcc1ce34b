use std::path::Path;
use std::process::{Command, Output};

use imprint_lab::config::ScenarioConfig;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imprint-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn without_timing(path: &Path) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    serde_json::to_string(&v).unwrap()
}

#[test]
fn run_writes_report_echoing_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = scenario("fullbatch64");
    let o = lab(&["run", "--config", &cfg, "--out", out, "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fullbatch64.report.json")).unwrap()).unwrap();
    let mut input = ScenarioConfig::from_json(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    input.seed = 3;
    assert_eq!(report["config"], input.canonical());
    assert_eq!(report["seed"], 3);
    assert_eq!(report["summary"]["all_exact_equal_singletons"], true);
    assert!(report["timing"]["seconds"].is_number());
    let csv = std::fs::read_to_string(dir.path().join("fullbatch64.trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn f64_reports_are_identical_across_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let o = lab(&["run", "--config", &scenario("fedavg8x8"), "--f64", "--jobs", jobs, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success());
    }
    let name = "fedavg8x8.report.json";
    assert_eq!(without_timing(&a.path().join(name)), without_timing(&b.path().join(name)));
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("fullbatch64")).unwrap().replace("\"c0\": 8.0", "\"c0\": 0.0");
    std::fs::write(&p, text).unwrap();
    let o = lab(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.c0"));
    let o = lab(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("csv.json");
    let cfg = format!(
        r#"{{"scenario": "c", "dataset": {{"kind": {{"csv": {{"path": "{}"}}}}}},
            "model": {{"imprint": "relu", "bins": {{"layout": {{"k": 8}}}}, "measurement": "mean",
                      "data_model": {{"normal": {{"mean": 0.0, "sd": 1.0}}}}, "c0": 1.0,
                      "head": {{"sink": {{"gain": 10.0, "bias": 30.0}}}}}},
            "federation": {{"protocol": "fedsgd"}}}}"#,
        dir.path().join("absent.csv").display()
    );
    std::fs::write(&p, cfg).unwrap();
    let o = lab(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn plan_prints_both_models() {
    let o = lab(&["plan", "--n", "3", "--k", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("error") && text.contains("0.7500"), "{text}");
    let o = lab(&["plan", "--n", "4096", "--p", "0.000244140625"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.3679"));
    let o = lab(&["plan", "--n", "64", "--k", "156", "--m", "150528", "--base", "11000000"]);
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.contains("32.0040"), "{text}");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&[
        "sweep",
        "--config",
        &scenario("fullbatch64"),
        "--axis",
        "bins",
        "--values",
        "16,64,256",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("fullbatch64.sweep_bins.csv")).unwrap();
    let exact: Vec<f64> = rdr.records().map(|r| r.unwrap()[9].parse().unwrap()).collect();
    assert_eq!(exact.len(), 3);
    assert!(exact[0] < exact[1] && exact[1] < exact[2], "{exact:?}");
    let o = lab(&["sweep", "--config", &scenario("oneshot"), "--axis", "bins", "--values", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_passes_bundled_scenario() {
    let o = lab(&["check", "--scenario", "fullbatch64"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("[PASS] fullbatch64"));
}
