use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn magan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magan"))
        .args(args)
        .output()
        .expect("spawn magan")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let o = magan(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn verify_seed_zero_passes() {
    let o = magan(&["verify", "--seed", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 8);
    assert!(!out.contains("FAIL"));
}

#[test]
fn ebgan_without_margin_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = magan(&["train", "--mode", "ebgan", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("margin"), "{}", stderr(&o));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn bad_set_syntax_is_a_usage_error() {
    let o = magan(&["train", "--set", "no-equals-sign"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("KEY=VALUE"), "{}", stderr(&o));
}

fn train_into(dir: &Path) {
    let o = magan(&[
        "train",
        "--seed",
        "4",
        "--set",
        "t_max=2",
        "--set",
        "n=256",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn seeded_train_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_into(a.path());
    train_into(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "trace.csv"));
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "mode = ebgan\nmargin = 2.5\nt_max = 1\nn = 128\n").unwrap();
    let out = dir.path().join("out");
    let o = magan(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--margin",
        "4",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(text.contains("margin = 4"), "{text}");
    assert!(text.contains("mode = ebgan"), "{text}");
}
