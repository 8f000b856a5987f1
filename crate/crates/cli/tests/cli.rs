use std::process::Command;

fn fairproj() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairproj"))
}

#[test]
fn train_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairproj()
        .args(["train", "--synthetic", "n=300", "--rounds", "10", "--epsilon", "0.2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["mode"], "fairproj");
    assert!(dir.path().join("curves.csv").exists());

    let status = fairproj().arg("verify").arg(dir.path().join("runlog.json")).output().unwrap().status;
    assert!(status.success());
}

#[test]
fn sweep_layout_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = fairproj()
        .args(["sweep", "--synthetic", "n=300", "--rounds", "8", "--seeds", "1..2", "--epsilon", "0.3", "--epsilon", "0.1", "--jobs", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["results.csv", "cells.csv", "pareto.csv", "manifest.json", "runs/fairproj-eps0.1-seed1/runlog.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    // one group only: every reweighing cell fails, adaboost cells still run
    let status = fairproj()
        .args(["sweep", "--synthetic", "n=200,imbalance=0", "--rounds", "5", "--seeds", "1", "--mode", "reweighing", "--mode", "adaboost", "--out"])
        .arg(dir.path().join("partial"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = fairproj()
        .args(["sweep", "--synthetic", "n=200,imbalance=0", "--rounds", "5", "--seeds", "1", "--mode", "reweighing", "--out"])
        .arg(dir.path().join("total"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn bad_arguments_fail() {
    assert!(!fairproj().args(["sweep", "--rounds", "3"]).output().unwrap().status.success());
    assert!(!fairproj().args(["sweep", "--synthetic", "--seeds", "9..1"]).output().unwrap().status.success());
    assert!(!fairproj().args(["train", "--synthetic", "bogus=1"]).output().unwrap().status.success());
}

#[test]
fn project_check_passes() {
    let out = fairproj()
        .args(["project-check", "--instances", "6", "--resolution", "300", "--tolerance", "1e-2"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
