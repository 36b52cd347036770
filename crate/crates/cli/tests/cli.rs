use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dreamforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dreamforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn mock_profile(dir: &Path) -> String {
    let path = dir.join("mock.json");
    std::fs::write(&path, r#"{ "version": 1 }"#).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(out: &Path, seed: &str, scenes: &str) -> Output {
    let profile = mock_profile(out);
    dreamforge(&[
        "run",
        "--task",
        "A lantern maker at work",
        "--backend-profile",
        &profile,
        "--seed",
        seed,
        "--scenes",
        scenes,
        "--out",
        out.to_str().unwrap(),
        "--json",
    ])
}

#[test]
fn run_populates_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "7", "3");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_eq!(v["status"], "complete");
    let run_dir = Path::new(v["run_dir"].as_str().unwrap());
    assert!(run_dir.join("manifest.json").is_file());
    assert_eq!(v["manifest"]["clips"].as_array().unwrap().len(), 3);
}

#[test]
fn rerun_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let first = json_of(&run(dir.path(), "2", "2"));
    let run_dir = Path::new(first["run_dir"].as_str().unwrap()).to_path_buf();
    let before = std::fs::read(run_dir.join("memory/index.json")).unwrap();
    let second = run(dir.path(), "2", "2");
    assert!(second.status.success());
    assert_eq!(json_of(&second)["run_id"], first["run_id"]);
    assert_eq!(std::fs::read(run_dir.join("memory/index.json")).unwrap(), before);
    let runs = std::fs::read_dir(dir.path().join("runs")).unwrap().count();
    assert_eq!(runs, 1);

    let resumed = dreamforge(&[
        "resume",
        first["run_id"].as_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--json",
    ]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    assert_eq!(json_of(&resumed)["status"], "complete");
}

#[test]
fn stats_counts_keyframes_per_run() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, scenes) in [("1", "3"), ("2", "4"), ("3", "4")] {
        assert!(run(dir.path(), seed, scenes).status.success());
    }
    let out = dreamforge(&["stats", dir.path().join("runs").to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_eq!(v["histogram"], serde_json::json!({ "3": 1, "4": 2 }));
    assert_eq!(v["runs_scanned"], 3);

    let text = dreamforge(&["stats", dir.path().to_str().unwrap()]);
    let table = String::from_utf8(text.stdout).unwrap();
    assert!(table.starts_with("keyframes  runs\n"), "{table}");
    assert!(table.contains("3 of 3 runs counted"));
}

#[test]
fn evaluate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_of(&run(dir.path(), "4", "3"));
    let out = dreamforge(&["evaluate", v["run_dir"].as_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&out);
    assert_eq!(report["metrics"]["frame_count"], 3);
    assert!(report["metrics"]["cssc"].is_number());
    assert!(Path::new(report["report"].as_str().unwrap()).is_file());
}

#[test]
fn evaluate_missing_directory_is_a_user_error() {
    let out = dreamforge(&["evaluate", "/definitely/not/a/run"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dreamforge(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(dreamforge(&["stats"]).status.code(), Some(1));
    assert_eq!(dreamforge(&["stats", "/no/such/dir"]).status.code(), Some(1));
    assert_eq!(dreamforge(&["resume", "run-nothing", "--out", "/no/such"]).status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    let v = dreamforge(&["--version"]);
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
    assert!(dreamforge(&["--help"]).status.success());
}

#[test]
fn check_profile_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let good = mock_profile(dir.path());
    assert!(dreamforge(&["check-profile", &good]).status.success());

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{ "version": 1, "embed": { "kind": "http", "endpoint": "ftp://x", "credential_env": "DREAMFORGE_TEST_UNSET_VAR" } }"#,
    )
    .unwrap();
    let out = dreamforge(&["check-profile", bad.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_of(&out);
    assert_eq!(v["ok"], false);
    assert!(v["issues"].as_array().unwrap().len() >= 2);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{ "version": 1, "speech": {} }"#).unwrap();
    assert_eq!(dreamforge(&["check-profile", unknown.to_str().unwrap()]).status.code(), Some(1));
}
