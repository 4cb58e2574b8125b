use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Copy of the shipped configs in a fresh directory, laid out like the repo
/// so the relative `../../runs` paths resolve inside it.
fn workspace() -> tempfile::TempDir {
    fn copy(from: &Path, to: &Path) {
        std::fs::create_dir_all(to).unwrap();
        for e in std::fs::read_dir(from).unwrap() {
            let e = e.unwrap();
            let dst = to.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                copy(&e.path(), &dst);
            } else {
                std::fs::copy(e.path(), dst).unwrap();
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    copy(&configs_dir(), &dir.path().join("configs"));
    dir
}

fn coefmon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coefmon")).args(args).current_dir(dir).output().unwrap()
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) {
    let o = coefmon(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn simulate_aid(dir: &Path) {
    for i in 0..10 {
        let out = format!("runs/aid_clean_{i}.csv");
        ok(dir, &["simulate", "--config", "configs/scenario_aid_clean.json", "--out", &out, "--seed", &i.to_string()]);
    }
    ok(
        dir,
        &["simulate", "--config", "configs/scenario_aid_clean.json", "--out", "runs/aid_holdout.csv", "--seed", "99"],
    );
    ok(dir, &["simulate", "--config", "configs/scenario_aid_blockade.json", "--out", "runs/aid_blockade.csv"]);
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn aid_pipeline_end_to_end() {
    let tmp = workspace();
    let d = tmp.path();
    simulate_aid(d);
    ok(d, &["calibrate", "--config", "configs/aid/calibrate.json", "--out", "runs/aid_profile.json"]);
    ok(d, &["detect", "--config", "configs/aid/detect.json", "--out", "runs/aid_verdicts.csv"]);
    ok(d, &["detect", "--config", "configs/aid/detect_clean.json", "--out", "runs/aid_clean_verdicts.csv"]);
    ok(d, &["baseline", "--config", "configs/aid/baseline.json", "--out", "runs/aid_baseline.csv"]);
    ok(d, &["mine", "--config", "configs/aid/mine.json", "--out", "runs/aid_omega.json"]);
    ok(d, &["report", "--config", "configs/aid/report.json", "--out", "runs/aid_report.json"]);

    assert!(read(d, "runs/aid_verdicts.csv").lines().nth(1).unwrap().contains(",Detected,"));
    assert!(read(d, "runs/aid_clean_verdicts.csv").lines().nth(1).unwrap().contains(",NotDetected,"));
    assert!(read(d, "runs/aid_baseline.csv").lines().nth(1).unwrap().contains(",NotDetected,"));

    let report: serde_json::Value = serde_json::from_str(&read(d, "runs/aid_report.json")).unwrap();
    assert_eq!(report["coefficient"]["tpr"], 1.0);
    assert_eq!(report["coefficient"]["ppv"], 1.0);
    assert_eq!(report["baseline"]["true_positives"], 0);
    assert_eq!(report["scenarios"][0]["coefficient"]["label"], "D");

    let omega: serde_json::Value = serde_json::from_str(&read(d, "runs/aid_omega.json")).unwrap();
    assert_eq!(omega["windows"].as_array().unwrap().len(), 1);

    // every listed output hashes to what the manifest says
    let manifest: serde_json::Value = serde_json::from_str(&read(d, "runs/aid_report.json.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "report");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3, "report plus two plots");
    for o in outputs {
        let bytes = std::fs::read(d.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], format!("{:x}", Sha256::digest(&bytes)));
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = workspace();
    let d = tmp.path();
    simulate_aid(d);
    ok(d, &["calibrate", "--config", "configs/aid/calibrate.json", "--out", "runs/a.json", "--jobs", "1"]);
    ok(d, &["calibrate", "--config", "configs/aid/calibrate.json", "--out", "runs/b.json", "--jobs", "3"]);
    assert_eq!(read(d, "runs/a.json"), read(d, "runs/b.json"));
    for s in ["5", "6"] {
        ok(
            d,
            &[
                "simulate",
                "--config",
                "configs/scenario_pitch_step.json",
                "--out",
                &format!("runs/p{s}.csv"),
                "--seed",
                "5",
            ],
        );
    }
    assert_eq!(read(d, "runs/p5.csv"), read(d, "runs/p6.csv"));
    ok(d, &["simulate", "--config", "configs/scenario_pitch_step.json", "--out", "runs/p7.csv", "--seed", "7"]);
    assert_ne!(read(d, "runs/p5.csv"), read(d, "runs/p7.csv"));
}

#[test]
fn empty_report_is_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("report.json"), "{\"scenarios\": []}").unwrap();
    ok(d, &["report", "--config", "report.json", "--out", "out.json"]);
    let report: serde_json::Value = serde_json::from_str(&read(d, "out.json")).unwrap();
    assert_eq!(report["scenarios"].as_array().unwrap().len(), 0);
    assert_eq!(report["coefficient"]["tpr"], serde_json::Value::Null);
    assert!(d.join("out.json.manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = workspace();
    let d = tmp.path();
    assert_eq!(coefmon(d, &["simulate", "--out", "x.csv"]).status.code(), Some(1));
    assert_eq!(coefmon(d, &["frobnicate"]).status.code(), Some(1));
    let o = coefmon(d, &["simulate", "--config", "configs/scenario_pitch_step.json", "--out", "x.csv", "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(coefmon(d, &["simulate", "--config", "missing.json", "--out", "x.csv"]).status.code(), Some(1));

    let mut cfg: serde_json::Value = serde_json::from_str(&read(d, "configs/aid/calibrate.json")).unwrap();
    cfg["mining"]["tau"] = "one minute".into();
    std::fs::write(d.join("configs/aid/bad.json"), cfg.to_string()).unwrap();
    let o = coefmon(d, &["calibrate", "--config", "configs/aid/bad.json", "--out", "p.json"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("mining.tau"), "{msg}");
}

#[test]
fn numerical_and_detection_failures_have_their_own_codes() {
    let tmp = workspace();
    let d = tmp.path();
    simulate_aid(d);
    ok(d, &["calibrate", "--config", "configs/aid/calibrate.json", "--out", "runs/aid_profile.json"]);

    // the blockade trace cannot be replayed within upsilon
    let mut mine: serde_json::Value = serde_json::from_str(&read(d, "configs/aid/mine.json")).unwrap();
    mine["trace"] = "../../runs/aid_blockade.csv".into();
    std::fs::write(d.join("configs/aid/mine_fault.json"), mine.to_string()).unwrap();
    let o = coefmon(d, &["mine", "--config", "configs/aid/mine_fault.json", "--out", "runs/w.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let mut det: serde_json::Value = serde_json::from_str(&read(d, "configs/aid/detect.json")).unwrap();
    det["on_nonconvergence"] = "fail".into();
    std::fs::write(d.join("configs/aid/detect_strict.json"), det.to_string()).unwrap();
    let o = coefmon(d, &["detect", "--config", "configs/aid/detect_strict.json", "--out", "runs/v.csv"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn every_shipped_scenario_simulates() {
    let tmp = workspace();
    let d = tmp.path();
    for s in ["aid_clean", "aid_blockade", "pitch_step", "brake_overflow"] {
        let cfg = format!("configs/scenario_{s}.json");
        let out = format!("runs/{s}.csv");
        ok(d, &["simulate", "--config", &cfg, "--out", &out]);
        assert!(read(d, &out).lines().count() > 10);
    }
}
