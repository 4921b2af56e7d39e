use std::path::Path;
use std::process::{Command, Output};

fn epilab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epilab"))
        .args(args)
        .arg("--no-timestamp")
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn unknown_cone_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = epilab(dir.path(), &["spectrum", "--cone", "sphere-product:9,9"]);
    assert_eq!(out.status.code(), Some(2));
    let out = epilab(dir.path(), &["spectrum", "--cone", "donut"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_reports_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let out = epilab(dir.path(), &["spectrum", "--cone", "clifford"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with('#')));
    assert_eq!(json(dir.path(), "spectrum.json")["kernel_dim"], 4);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"cone": "plane:2,1", "seed": 5, "ensemble_size": 7, "delta": 0.01}"#).unwrap();
    let out = epilab(dir.path(), &["epi-check", "--config", cfg.to_str().unwrap(), "--ensemble-size", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(dir.path(), "epi.json");
    assert_eq!(v["summary"]["count"], 4);
    assert_eq!(v["summary"]["seed"], 5);
    assert_eq!(v["family"], "plane:2,1");
}

#[test]
fn oversized_traces_are_refused_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = epilab(dir.path(), &["epi-check", "--cone", "clifford", "--delta", "0.3", "--ensemble-size", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(json(dir.path(), "epi.json")["summary"]["refused"], 3);
}

#[test]
fn reduce_with_large_ball_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = epilab(dir.path(), &["reduce", "--cone", "clifford", "--rho-k", "5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn decay_then_report() {
    let dir = tempfile::tempdir().unwrap();
    assert!(epilab(dir.path(), &["decay", "--gamma", "0.5"]).status.success());
    let header = std::fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    assert!(header.lines().any(|l| l == "r,log_r,e,e_tilde,M,bound"));
    let out = epilab(dir.path(), &["report"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.json").exists());
}
