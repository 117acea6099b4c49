use std::path::{Path, PathBuf};
use std::process::Command;

fn price() -> Command {
    Command::new(env!("CARGO_BIN_EXE_price"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_ex2(out: &Path) {
    let status = price()
        .args(["run", "--example", "ex2", "--workers", "3", "--config"])
        .arg(config("ex2.json"))
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ex2(&a);
    run_ex2(&b);
    for name in ["dirichlet_truncation.csv", "transparent_truncation.csv", "truncation_curves.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert!(!x.is_empty());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["workers"], 3);
    assert!(manifest["max_relative_imag_residual"].as_f64().unwrap() <= 1e-10);
    let csv = std::fs::read_to_string(a.join("transparent_truncation.csv")).unwrap();
    let last = csv.trim_end().lines().last().unwrap();
    assert_eq!(last, "15,640,0.078125,4.5508E-05,1.998");
}

#[test]
fn oracle_command_passes() {
    let out = price().args(["oracle", "--fields", "200"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn mismatched_example_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = price()
        .args(["run", "--example", "ex1", "--config"])
        .arg(config("ex2.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}
