use std::path::Path;
use std::process::{Command, Output};

fn gapaudit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapaudit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// `audit_extra` is appended to the `[audit]` table.
fn write_config(dir: &Path, audit_extra: &str) {
    let text = format!(
        "seed = 5\ninputs = [\"fx.jsonl\"]\n\
         [train]\nmodels = [\"ridge\", \"xgb-conservative\"]\nn_estimators = 15\n\
         [select]\nsweep_n_estimators = 15\n\
         [shap]\nmax_instances = 10\n\
         [audit]\nn_estimators = 15\n{audit_extra}"
    );
    std::fs::write(dir.join("cfg.toml"), text).unwrap();
}

fn synth_fixture(dir: &Path) {
    let out = gapaudit(&["synth", "--n", "300", "--leak", "0.05", "--seed", "3", "--out", "fx.jsonl"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_succeeds_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    write_config(dir.path(), "");
    let out = gapaudit(&["pipeline", "--config", "cfg.toml", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["seed"], 5);
    assert!(dir.path().join("run/manifest.json").is_file());
    assert!(!dir.path().join("run/FAILED.json").exists());
}

#[test]
fn missing_input_is_validation_error_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let out = gapaudit(&["pipeline", "--config", "cfg.toml", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn stage_failure_leaves_marker_and_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    write_config(dir.path(), "candidates = [\"no_such_field\"]\n");
    let out = gapaudit(&["pipeline", "--config", "cfg.toml", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let failed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/FAILED.json")).unwrap()).unwrap();
    assert_eq!(failed["stage"], "audit");
    assert!(failed["config_hash"].is_string());
    assert!(dir.path().join("run/train/phase_comparison.json").is_file());
    assert!(!dir.path().join("run/manifest.json").exists());
}

#[test]
fn unknown_preset_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let out = gapaudit(&["train", "--matrix", "m.csv", "--model", "svr", "--out", "t"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model preset"));
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_fixture(d);
    let run = |args: &[&str]| {
        let out = gapaudit(args, d);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["ingest", "--input", "fx.jsonl", "--out", "ing"]);
    run(&["curate", "--input", "ing/records.jsonl", "--out", "cur"]);
    run(&["integrity", "--raw", "ing/records.jsonl", "--curated", "cur/curated.jsonl", "--out", "int"]);
    run(&["features", "--curated", "cur/curated.jsonl", "--phase", "II", "--out", "feat"]);
    let trained = run(&[
        "train", "--matrix", "feat/phase_II.csv", "--model", "xgb-conservative", "--n-estimators", "20",
        "--out", "tr",
    ]);
    assert!(trained.starts_with("r2 = "));
    run(&["shap", "--model", "tr/model.json", "--matrix", "feat/phase_II.csv", "--max-instances", "5", "--out", "sh"]);
    run(&["audit", "--curated", "cur/curated.jsonl", "--n-estimators", "10", "--out", "au"]);

    let shap: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("sh/shap.json")).unwrap()).unwrap();
    assert_eq!(shap["instances"].as_array().unwrap().len(), 5);
    assert_eq!(shap["phase"], "II");
    let split: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("tr/split.json")).unwrap()).unwrap();
    assert_eq!(shap["instances"][0]["id"], split["test_ids"][0]);
    for f in ["ing/merge_report.json", "cur/funnel.json", "int/integrity.json", "tr/metrics.json", "au/audit.json"] {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join(f)).unwrap()).unwrap();
        assert_eq!(v["seed"], 42, "{f}");
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64, "{f}");
    }
}

#[test]
fn synth_matrix_mode_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapaudit(
        &["synth", "--matrix", "--n", "60", "--p-clean", "3", "--leak", "0.1", "--out", "m/x.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("m/x.csv")).unwrap();
    assert!(text.starts_with("x0,x1,x2,leak,target\n"));
    assert_eq!(text.lines().count(), 61);
}
