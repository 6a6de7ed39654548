use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn musegnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musegnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = musegnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_setup(dir: &Path) -> String {
    let spec = r#"{"n_datasets": 2, "n_cells": 300, "n_genes": 60, "module_size": 10, "base_mean": 8.0,
                   "modalities": ["scRNA", "spatial"], "seed": 1}"#;
    fs::write(dir.join("spec.json"), spec).unwrap();
    let config = format!(
        r#"{{"manifest": "{m}", "out_dir": "{o}", "seed": 2,
            "hyperparams": {{"epochs": 3, "hidden_dim": 8, "embed_dim": 4, "heads": 2, "decoder_hidden": 4,
                             "sample_size": 10, "lr_encoder": 0.001}},
            "preprocess": {{"n_se_genes": 40}}}}"#,
        m = dir.join("data/manifest.json").display(),
        o = dir.join("out").display()
    );
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    cfg.display().to_string()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path());
    let data = dir.path().join("data");
    let manifest = ok(&["simulate", "--spec", dir.path().join("spec.json").to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(manifest.trim().ends_with("manifest.json"));

    let built = ok(&["build-graphs", "-c", &cfg]);
    assert_eq!(built.lines().count(), 2);
    assert!(built.contains("Spatial"));
    assert!(ok(&["build-graphs", "-c", &cfg]).lines().all(|l| l.ends_with("cached")));

    ok(&["--threads", "1", "train", "-c", &cfg, "--no-sim", "--no-infonce"]);
    let log = fs::read_to_string(dir.path().join("out/trainlog.csv")).unwrap();
    let rows: Vec<&str> = log.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!((f[3], f[4]), ("0", "0"), "{r}");
    }

    let again = dir.path().join("again.csv");
    ok(&["embed", "-c", &cfg, "--out", again.to_str().unwrap()]);
    assert_eq!(fs::read(&again).unwrap(), fs::read(dir.path().join("out/embeddings.csv")).unwrap());

    let trained = dir.path().join("out/embeddings.csv");
    let report = ok(&[
        "evaluate",
        "-c",
        &cfg,
        "--method",
        &format!("a={}", trained.display()),
        "--method",
        &format!("b={}", again.display()),
    ]);
    assert!(report.contains("a") && report.contains("b"));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(musegnn(&["--help"]).status.code(), Some(0));
    assert_eq!(musegnn(&["no-such-command"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"preprocess": {"alpha": 3.0}}"#).unwrap();
    assert_eq!(musegnn(&["build-graphs", "-c", bad.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    fs::write(&missing, format!(r#"{{"manifest": "{}"}}"#, dir.path().join("nope.json").display())).unwrap();
    assert_eq!(musegnn(&["build-graphs", "-c", missing.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(musegnn(&["evaluate", "--method", "broken"]).status.code(), Some(1));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path());
    let shown = ok(&["config", "-c", &cfg, "--seed", "9", "--out-dir", "elsewhere"]);
    let v: serde_json::Value = serde_json::from_str(&shown).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["out_dir"], "elsewhere");
    assert_eq!(v["hyperparams"]["epochs"], 3);
}
