use std::path::Path;
use std::process::Command;

fn run(config: &str, dir: &Path, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_parcap"))
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir.join("out")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

const APPELL: &str =
    r#"{"name": "check", "context": {"dim": 1, "gamma": [0.5], "half_space": "lower"}, "task": {"kind": "appell-check", "points": 50}}"#;

#[test]
fn emit_selects_files() {
    for (emit, want) in [("json", vec!["check.json"]), ("csv", vec!["check.csv"]), ("both", vec!["check.csv", "check.json"])] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(APPELL, tmp.path(), &["--emit", emit]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(listing(tmp.path()), want);
    }
}

#[test]
fn report_records_seed_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(APPELL, tmp.path(), &["--seed", "17"]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/check.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 17);
    assert_eq!(report["config"]["fd_points"], 40);
    assert_eq!(report["status"], "done");
    let csv = std::fs::read_to_string(tmp.path().join("out/check.csv")).unwrap();
    assert!(csv.starts_with("check,value,threshold,pass\n"));
}

#[test]
fn every_violation_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = r#"{"context": {"dim": 2, "gamma": [1.0], "half_space": "upper"}, "task": {"kind": "simulate", "n_paths": 0}}"#;
    let out = run(bad, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for p in ["/context/gamma", "/task/n_paths"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn unreadable_json_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("{\"context\": ", tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
