use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn rmwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmwalk")).args(args).output().unwrap()
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_config() -> Value {
    json!({
        "ensemble": {"dim": 2, "B": 2.0, "family": {"kind": "scaled_uniform", "scale": {"sd": 1.0}}},
        "experiment": "check_lemma_keylem_audit",
        "experiment_params": {"trials": 2000, "max_word_len": 6},
        "seed": 9,
        "calibration": {"budget": 200000, "horizon": 128, "burn_in": 16},
        "assumption_budget": 5000,
        "sigma": {"horizon": 64, "reps": 5000}
    })
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["bogus_knob"] = json!(1);
    let out = rmwalk(&["run", "--config", &write_config(dir.path(), &cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_knob"));
}

#[test]
fn unknown_experiment_param_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["experiment_params"]["trails"] = json!(5);
    let out = rmwalk(&["run", "--config", &write_config(dir.path(), &cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("trails") && err.contains("check_lemma_keylem_audit"),
        "{err}"
    );
}

#[test]
fn list_experiments_covers_the_registry() {
    let out = rmwalk(&["list-experiments", "--json"]);
    assert!(out.status.success());
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), rmwalk::harness::EXPERIMENTS.len());
    let gned = rows.iter().find(|r| r["id"] == "check_gnedenko").unwrap();
    assert!(gned["reference"].as_str().unwrap().contains("theoGnedenkocone"));
    let rev = rows.iter().find(|r| r["id"] == "check_reverse_lemma").unwrap();
    assert!(rev["guards"].as_str().unwrap().contains("Delta"));
    let text = String::from_utf8(rmwalk(&["list-experiments"]).stdout).unwrap();
    assert!(text.contains("check_gnedenko"));
}

#[test]
fn run_writes_stamped_artifacts_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let mut dirs = Vec::new();
    for workers in ["1", "8"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = rmwalk(&[
            "run",
            "--config",
            &config,
            "--workers",
            workers,
            "--output",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(out_dir);
    }
    for name in [
        "estimates.json",
        "verdicts.json",
        "ensemble.json",
        "summary.csv",
        "plot_data.csv",
    ] {
        let a = fs::read(dirs[0].join(name)).unwrap();
        let b = fs::read(dirs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let summary = fs::read_to_string(dirs[0].join("summary.csv")).unwrap();
    let verdicts: Value = serde_json::from_slice(&fs::read(dirs[0].join("verdicts.json")).unwrap()).unwrap();
    let hash = verdicts["provenance"]["config_hash"].as_str().unwrap();
    assert!(summary.lines().nth(1).unwrap().contains(hash));
    assert!(summary.contains(rmwalk::runner::VERSION));
    assert!(dirs[0].join("metadata.json").exists());
}

#[test]
fn seed_override_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let read_hash = |seed: &str| {
        let out_dir = dir.path().join(format!("s{seed}"));
        let out = rmwalk(&[
            "run",
            "--config",
            &config,
            "--seed",
            seed,
            "--output",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        let v: Value = serde_json::from_slice(&fs::read(out_dir.join("verdicts.json")).unwrap()).unwrap();
        v["provenance"]["config_hash"].as_str().unwrap().to_owned()
    };
    assert_ne!(read_hash("1"), read_hash("2"));
}
