use std::collections::BTreeMap;
use std::path::Path;

use gapaudit::audit::Verdict;
use gapaudit::ingest::write_jsonl;
use gapaudit::pipeline::{read_json, run_pipeline, sha256_hex, PipelineConfig, PipelineSummary};
use gapaudit::synth::{synth_records, SynthRecordsSpec};
use serde_json::Value;

fn fixture_run(dir: &Path, leak: f64) -> PipelineSummary {
    let records = synth_records(&SynthRecordsSpec::new(1200, leak, 21)).unwrap();
    let input = dir.join("fx.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).unwrap();
    std::fs::write(&input, buf).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.inputs = vec![input];
    cfg.train.models = vec!["ridge".into(), "rf-conservative".into(), "rf-balanced".into(), "xgb-conservative".into()];
    cfg.train.n_estimators = Some(30);
    cfg.select.sweep_n_estimators = Some(30);
    cfg.audit.n_estimators = Some(60);
    cfg.shap.max_instances = 25;
    run_pipeline(&cfg, &dir.join("out")).unwrap()
}

#[test]
fn planted_leak_is_flagged_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let summary = fixture_run(dir.path(), 0.05);
    assert_eq!(summary.audit["avg_elec_mass"], Verdict::Flagged);
    assert_eq!(summary.audit["avg_hole_mass"], Verdict::Flagged);

    let out = dir.path().join("out");
    let audit: Value = read_json(&out.join("audit/audit.json")).unwrap();
    let baseline_cols: Vec<String> =
        serde_json::from_value(audit["report"]["baseline_columns"].clone()).unwrap();
    assert!(!baseline_cols.iter().any(|c| c.starts_with("avg_")));
}

#[test]
fn noisy_mass_columns_stay_clean() {
    let dir = tempfile::tempdir().unwrap();
    let summary = fixture_run(dir.path(), 10.0);
    assert!(summary.audit.values().all(|v| *v == Verdict::Clean), "{:?}", summary.audit);
}

#[test]
fn bundle_is_stamped_hashed_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let summary = fixture_run(dir.path(), 0.05);
    let out = dir.path().join("out");

    let manifest: Value = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest["config_hash"], summary.config_hash.as_str());
    let artifacts = manifest["artifacts"].as_object().unwrap();
    for rel in ["curate/funnel.json", "integrity.json", "select/sweep.json", "shap/phase_III.json", "audit/audit.json"] {
        assert!(artifacts.contains_key(rel), "{rel} missing");
    }
    for (rel, hash) in artifacts {
        let bytes = std::fs::read(out.join(rel)).unwrap();
        assert_eq!(sha256_hex(&bytes), hash.as_str().unwrap(), "{rel}");
        if rel.ends_with(".json") {
            let v: Value = serde_json::from_slice(&bytes).unwrap();
            assert_eq!(v["config_hash"], summary.config_hash.as_str(), "{rel}");
            assert_eq!(v["seed"], 42, "{rel}");
        }
    }

    let cmp: Value = read_json(&out.join("train/phase_comparison.json")).unwrap();
    let mut best: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    let mut max_r2: BTreeMap<(String, String), f64> = BTreeMap::new();
    for e in cmp["entries"].as_array().unwrap() {
        let key = (e["family"].as_str().unwrap().to_string(), e["phase"].as_str().unwrap().to_string());
        let r2 = e["metrics"]["r2"].as_f64().unwrap();
        let m = max_r2.entry(key.clone()).or_insert(f64::NEG_INFINITY);
        *m = m.max(r2);
        if e["best"] == true {
            let slot = best.entry(key).or_insert((0, r2));
            slot.0 += 1;
        }
    }
    assert_eq!(best.len(), max_r2.len());
    for (key, (count, r2)) in &best {
        assert_eq!(*count, 1, "{key:?}");
        assert_eq!(*r2, max_r2[key], "{key:?}");
    }

    let funnel: Value = read_json(&out.join("curate/funnel.json")).unwrap();
    let stages = funnel["stages"].as_array().unwrap();
    for w in stages.windows(2) {
        assert_eq!(w[0]["out"], w[1]["in"]);
    }
    assert_eq!(funnel["final_count"].as_u64().unwrap() as usize, summary.curated);

    let sweep: Value = read_json(&out.join("select/sweep.json")).unwrap();
    assert_eq!(sweep["selected"].as_array().unwrap().len(), summary.selected_features);
    let shap: Value = read_json(&out.join("shap/phase_III.json")).unwrap();
    assert_eq!(shap["feature_names"], sweep["selected"]);
    for inst in shap["instances"].as_array().unwrap() {
        assert!(inst["additivity_residual"].as_f64().unwrap().abs() <= 1e-8);
    }
}
