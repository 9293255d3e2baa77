use std::fs;
use std::process::Command;

fn soar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_soar"))
}

fn scenario(name: &str) -> String {
    format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn validate_prints_resolved_scenario() {
    let out = soar().args(["validate", &scenario("box")]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["resolution"], 0.5);
    assert_eq!(v["photographer_starts"].as_array().unwrap().len(), 3);
}

#[test]
fn invalid_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"scene": {"builtin": "box"}, "n_photographers": 1, "dt": 0}"#).unwrap();
    let out = soar().args(["validate", p.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn run_out_of_ticks_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = soar()
        .args(["run", &scenario("box"), "--ticks", "20", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("metrics.json").is_file());
}

#[test]
fn empty_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = soar()
        .args(["run", &scenario("empty"), "--seed", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("summary.md").is_file());
}

#[test]
fn atsp_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(&p, r#"{"matrix": [[0,1,9,9],[9,0,1,9],[9,9,0,1],[1,9,9,0]]}"#).unwrap();
    let out = soar().args(["oracle", "atsp-exhaustive", p.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cost"], 3.0);
    assert_eq!(v["order"], serde_json::json!([1, 2, 3]));
}

#[test]
fn mtsp_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(
        &p,
        r#"{"c_d": [[1, 10], [10, 1]], "c_vct": [[0, 5], [5, 0]]}"#,
    )
    .unwrap();
    let out = soar().args(["oracle", "mtsp-exhaustive", p.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["paths"], serde_json::json!([[0], [1]]));
}

#[test]
fn malformed_oracle_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(&p, "{").unwrap();
    let out = soar().args(["oracle", "atsp-exhaustive", p.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
