use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stlab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stlab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("STLAB_WORKERS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn check_writes_footer_with_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("spikes_b075_check.json");
    let o = stlab(&["check", "--assert"], &cfg, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("verdicts.csv")).unwrap();
    let sha = hex(&Sha256::digest(std::fs::read(&cfg).unwrap()));
    let footer = csv.lines().last().unwrap();
    assert_eq!(footer, format!("# config_sha256={sha} seed=0 version=0.1.0"));
    assert!(csv.starts_with("condition,"));
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"schema": 1, "seed": 5, "model": {"family": "linear", "space": {"kind": "rademacher"},
            "coeffs": {"prefix": [1.0, -1.0], "tail": {"kind": "finite_support"}}}, "n": 8}"#,
    );
    let o = stlab(&["simulate"], &cfg, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    assert!(a.ends_with("seed=5 version=0.1.0\n"), "{a}");
    let o = stlab(&["simulate", "--seed", "9"], &cfg, tmp.path());
    assert_eq!(code(&o), 0);
    let b = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    assert!(b.ends_with("seed=9 version=0.1.0\n"), "{b}");
}

#[test]
fn schema_errors_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"schema": 1, "replicatez": 3}"#);
    let o = stlab(&["check"], &cfg, tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicatez"));

    let o = stlab(&["check", "--workers", "0"], &configs().join("geometric_check.json"), tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn too_few_replicates_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"schema": 1, "model": {"family": "linear", "space": {"kind": "normal", "std_dev": 1.0},
            "coeffs": {"tail": {"kind": "geometric", "params": {"ratio": 0.5}}}}, "n": 64, "replicates": 10}"#,
    );
    assert_eq!(code(&stlab(&["clt"], &cfg, tmp.path())), 2);
}

#[test]
fn refusals_exit_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stlab(&["check"], &configs().join("custom_check.json"), tmp.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stdout));

    let body = std::fs::read_to_string(configs().join("powerlog_check.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("expect_verdicts");
    obj.insert("n".into(), 256.into());
    obj.insert("replicates".into(), 2000.into());
    let cfg = write_config(tmp.path(), &v.to_string());
    let o = stlab(&["clt"], &cfg, tmp.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_expectation_exits_with_assertion_code() {
    let tmp = tempfile::tempdir().unwrap();
    let body = std::fs::read_to_string(configs().join("powerlog_variance.json")).unwrap();
    let cfg = write_config(tmp.path(), &body.replace("\"Growth\"", "\"Stable\""));
    assert_eq!(code(&stlab(&["variance", "--assert"], &cfg, tmp.path())), 3);
    assert_eq!(code(&stlab(&["variance"], &cfg, tmp.path())), 0);
}

#[test]
fn worker_env_is_overridden_by_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("geometric_check.json");
    let o = Command::new(env!("CARGO_BIN_EXE_stlab"))
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .env("STLAB_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_stlab"))
        .args(["check", "--workers", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .env("STLAB_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
