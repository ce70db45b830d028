use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use isilearn_core::report::parse_taps_csv;
use isilearn_core::signal::design_rrc;
use sha2::{Digest, Sha256};

fn isilearn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isilearn"))
        .args(args)
        .current_dir(dir)
        .env_remove("ISILEARN_THREADS")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// One mode, one length, one seed, one learning rate.
const SMALL: &str = r#"
modes = ["PS"]
taps = [9]
seeds = [0]
[training]
lr0_grid = [1e-3]
"#;

#[test]
fn unknown_config_key_exits_2_with_field_name() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", "[training]\nlearning_rate = 0.1\n");
    let out = isilearn(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn bad_arguments_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["reproduce", "fig9"],
        vec!["train", "--scale", "0"],
        vec!["train", "--jobs", "0"],
        vec!["train", "--config", "missing.toml"],
        vec!["bogus"],
    ] {
        let out = isilearn(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
    write(tmp.path(), "c.toml", SMALL);
    let out = isilearn(&["reproduce", "fig3", "--config", "c.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_isilearn"))
        .args(["train"])
        .current_dir(tmp.path())
        .env("ISILEARN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_taps_file_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = isilearn(&["evaluate", "--taps", "taps_PS_25.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn tap_length_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let rrc = design_rrc(9, 4, 0.01).unwrap();
    let text = isilearn_core::report::taps_csv(&rrc, &rrc);
    write(tmp.path(), "taps_PS_9.csv", &text);
    write(tmp.path(), "taps_PS_25.csv", &text);
    // default config trains 25 taps
    let out = isilearn(&["evaluate", "--taps", "taps_PS_9.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("tap-length mismatch"));
    // file holds 9 taps but is named for 25
    let out = isilearn(&["diagnose", "--taps", "taps_PS_25.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn diverging_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "c.toml",
        "modes = [\"PS_and_RxF\"]\ntaps = [9]\nseeds = [0]\n[training]\nlr0_grid = [1e300]\ntrain_symbols = 3000\n",
    );
    let out = isilearn(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(!tmp.path().join("o").exists());
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[test]
fn train_writes_full_trace_frozen_rx_filter_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", SMALL);
    let out = isilearn(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let o = tmp.path().join("o");

    let loss = fs::read_to_string(o.join("loss_PS_9.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,lr,loss"));
    assert_eq!(loss.lines().count() - 1, 2500);

    let (_, rx) = parse_taps_csv(&fs::read_to_string(o.join("taps_PS_9.csv")).unwrap()).unwrap();
    assert_eq!(rx, design_rrc(9, 4, 0.01).unwrap().taps());

    let screening = fs::read_to_string(o.join("screening.csv")).unwrap();
    assert!(screening.lines().nth(1).unwrap().starts_with("PS,9,0,1.00000000e-3,"));

    let manifest: toml::Table = fs::read_to_string(o.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("train"));
    assert_eq!(
        manifest["config"]["training"]["train_symbols"].as_integer(),
        Some(2_500_000)
    );
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 4);
    for f in files {
        let bytes = fs::read(o.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), blob_hash(&bytes));
    }

    // the echoed config regenerates the same files
    let again = isilearn(&["train", "--config", "o/config.toml", "--out", "again"], tmp.path());
    assert!(again.status.success());
    for name in ["taps_PS_9.csv", "loss_PS_9.csv", "screening.csv", "config.toml"] {
        assert_eq!(
            fs::read(o.join(name)).unwrap(),
            fs::read(tmp.path().join("again").join(name)).unwrap()
        );
    }
}

#[test]
fn evaluate_sweeps_every_seed_and_snr() {
    let tmp = tempfile::tempdir().unwrap();
    let rrc = design_rrc(25, 4, 0.01).unwrap();
    let text = isilearn_core::report::taps_csv(&rrc, &rrc);
    let mut args = vec![
        "evaluate".to_string(),
        "--scale".into(),
        "0.001".into(),
        "--out".into(),
        "o".into(),
        "--taps".into(),
    ];
    for name in [
        "taps_PS_and_RxF_25.csv",
        "taps_PS_and_RxF_25_seed1.csv",
        "taps_PS_and_RxF_25_seed2.csv",
        "taps_PS_and_RxF_25_seed3.csv",
        "taps_PS_and_RxF_25_seed4.csv",
    ] {
        write(tmp.path(), name, &text);
        args.push(name.into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = isilearn(&args, tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("o/ser_vs_snr.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,mode,num_taps,seed,ser,theory_ser"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 55);
    assert!(rows.iter().all(|r| r[1] == "PS_and_RxF" && r[2] == "25"));
    // 1.5 Q(sqrt(0.4 * 10^1.2)) from scipy
    let at12 = rows.iter().find(|r| r[0] == "1.20000000e1").unwrap();
    assert_eq!(at12[5], "8.85549880e-3");

    let summary = fs::read_to_string(tmp.path().join("o/ser_vs_snr_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 12);
    let manifest: toml::Table = fs::read_to_string(tmp.path().join("o/manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["scale"].as_float(), Some(0.001));
}

#[test]
fn jobs_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "c.toml",
        "modes = [\"RxF\", \"PS_and_RxF\"]\ntaps = [9]\nseeds = [0, 1]\n[training]\nlr0_grid = [1e-3, 5e-4]\n",
    );
    for (jobs, dir) in [("1", "a"), ("3", "b")] {
        let out = isilearn(
            &[
                "train", "--config", "c.toml", "--scale", "0.01", "--jobs", jobs, "--out", dir,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in [
        "taps_RxF_9.csv",
        "taps_PS_and_RxF_9_seed1.csv",
        "screening.csv",
        "manifest.toml",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}
