//! End-to-end checks of the installed binary: happy paths over the
//! presets and the JSON error contract on stderr.

use std::path::PathBuf;
use std::process::Command;

fn chb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chb"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let path = std::env::temp_dir().join(format!("chb-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&path);
        std::fs::create_dir_all(&path).unwrap();
        TempDir(path)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

#[test]
fn validate_preset_prints_the_assumption_report() {
    let out = chb().args(["validate", "constant"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[pass] A1"), "missing report line:\n{text}");
    assert!(text.contains("alpha0"), "missing constants line:\n{text}");
}

#[test]
fn unknown_inputs_fail_with_a_json_error_on_stderr() {
    let out = chb().args(["validate", "no-such-preset"]).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("preset"));

    let out = chb().args(["mms", "nonsense"]).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("nonsense"));
}

#[test]
fn run_then_certify_round_trips_an_artifact_directory() {
    let tmp = TempDir::new("roundtrip");
    let dir = tmp.0.join("run");
    let out = chb()
        .args(["run", "constant", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("certified"), "run summary should report the verdict:\n{text}");
    for f in ["diagnostics.csv", "run_meta.json", "certificate.json", "snapshots/index.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }

    let out = chb()
        .arg("certify")
        .arg(&dir)
        .args(["--t-end", "2", "--tau", "0.5", "--delta", "0.1", "--n-max", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["passed"], true);
    assert_eq!(cert["delta"], 0.1);
}
