use std::path::Path;
use std::process::{Command, Output};

fn ccrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrl")).args(args).output().expect("binary runs")
}

const SMALL: &str = r#"
name = "small"
schemes = ["similarity", "none"]
seeds = [3]

[task]
kind = "ar"
horizon = 20

[[groups]]
param = "target"
mean = -4.0
sd = 0.1
count = 2

[[groups]]
param = "target"
mean = 4.0
sd = 0.1
count = 2

[extraction]
samples = 30
components = 2

[extraction.anm_mm]
max_iters = 40

[training]
epochs = 2
batch_size = 16

[training.ddpg]
actor_hidden = [8]
critic_hidden = [8]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn extract_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = ccrl(&["extract", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["theta.csv", "allocation.csv", "gmm.csv", "responsibilities.csv", "quality.csv"] {
        assert!(out.join("seed_3").join(f).exists(), "missing {f}");
    }
    assert!(!out.join("seed_3").join("curves.csv").exists());
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("name = \"small\""));
}

#[test]
fn train_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = ccrl(&[
        "train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5", "--scheme", "none",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("scheme,seed,"));
    assert!(summary.lines().skip(1).all(|l| l.starts_with("none,5,")));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seeds = [3]", "seeds = [3]\nsede = 1"));
    let o = ccrl(&["extract", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage `config`"), "{err}");
    assert!(err.contains("sede"), "{err}");
}

#[test]
fn bad_scheme_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = ccrl(&["train", "--config", &cfg, "--scheme", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown scheme"));
    let o = ccrl(&["train", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ccrl(&["reproduce", "fig2", "--smoke"]);
    assert_eq!(o.status.code(), Some(2));
}
