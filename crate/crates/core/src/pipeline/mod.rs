//! End-to-end orchestration: ingest, curate, integrity, features, select,
//! train, explain, audit. Every stage writes into one output directory.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{run_audit, LeakageReport, RiskRegistry, Verdict};
use crate::curate::{apply_filters, effective_mass_subset, write_curated, CuratedRecord};
use crate::error::{Error, Result};
use crate::explain::{explain_matrix, global_importance, GlobalImportance, ShapExplanation};
use crate::features::elements::ElementTable;
use crate::features::{build_matrix, phase3_row, FeatureConfig};
use crate::ingest::{
    dedup_lowest_energy, merge_sources, normalize_missing, parse_records, write_jsonl, InputFormat,
    RawRecord, SourceMergeReport,
};
use crate::integrity::integrity_report;
use crate::learn::{make_split, train_and_evaluate, FittedModel, SplitSpec};
use crate::matrix::{FeatureMatrix, Phase};
use crate::select::{
    correlation_filter, importance_ranking, subset_sweep, variance_filter, CorrelationDrop,
    RankedFeature, SelectConfig, SweepResult, VarianceDrop,
};

pub use config::{PipelineConfig, ShapConfig, TrainConfig};
pub use report::{
    emit_parity_and_residuals, sha256_hex, Bundle, ComparisonEntry, PhaseComparison,
    ResidualSummary,
};

/// Reads one source: parse, then placeholder normalization.
pub fn read_source(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let records = parse_records(BufReader::new(file), InputFormat::from_path(path))?;
    Ok(records.into_iter().map(normalize_missing).collect())
}

/// Reads one or two sources, merges them and keeps the lowest-energy polymorphs.
pub fn ingest_sources(paths: &[PathBuf]) -> Result<(Vec<RawRecord>, SourceMergeReport)> {
    let (merged, report) = match paths {
        [a] => {
            let a = read_source(a)?;
            let n = a.len();
            merge_sources(a, Vec::new()).map(|(m, mut r)| {
                r.records_in_a = n;
                (m, r)
            })?
        }
        [a, b] => merge_sources(read_source(a)?, read_source(b)?)?,
        _ => {
            return Err(Error::Config(format!(
                "expected one or two inputs, got {}",
                paths.len()
            )))
        }
    };
    let (kept, dedup) = dedup_lowest_energy(merged);
    Ok((kept, report.with_dedup(&dedup)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExclusion {
    pub id: String,
    pub error: String,
}

/// Phase matrices over one shared row set. Records whose composition cannot
/// be featurized are dropped from every phase so the phases stay aligned.
pub fn featurize(
    curated: &[CuratedRecord],
    cfg: &FeatureConfig,
    table: &ElementTable,
) -> Result<(BTreeMap<Phase, FeatureMatrix>, Vec<FeatureExclusion>)> {
    cfg.validate()?;
    let checks: Vec<Option<String>> = curated
        .par_iter()
        .map(|r| phase3_row(r, table, cfg).err().map(|e| e.to_string()))
        .collect();
    let mut kept = Vec::with_capacity(curated.len());
    let mut excluded = Vec::new();
    for (r, check) in curated.iter().zip(checks) {
        match check {
            None => kept.push(r.clone()),
            Some(error) => excluded.push(FeatureExclusion {
                id: r.id().to_string(),
                error,
            }),
        }
    }
    let matrices = Phase::ALL
        .iter()
        .map(|&p| Ok((p, build_matrix(&kept, p, cfg, table)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok((matrices, excluded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub variance_dropped: Vec<VarianceDrop>,
    pub correlation_dropped: Vec<CorrelationDrop>,
    /// Computed on the training rows only.
    pub ranking: Vec<RankedFeature>,
    pub sweep: SweepResult,
    pub selected: Vec<String>,
}

/// Variance and correlation filters, train-only importance ranking, then the
/// subset sweep. Returns the matrix restricted to the best subset.
pub fn select_features(
    m: &FeatureMatrix,
    split: &SplitSpec,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<(FeatureMatrix, SelectionReport)> {
    cfg.validate()?;
    let (m, variance_dropped) = variance_filter(m, cfg.variance_threshold)?;
    let (m, correlation_dropped) = correlation_filter(&m, cfg.correlation_cutoff)?;
    let mut ranking_params = cfg.ranking_model;
    ranking_params.seed = seed;
    let ranking = importance_ranking(&m.select_rows(&split.train), &ranking_params)?;
    let sweep = subset_sweep(&m, &ranking, cfg, split, &cfg.sweep_spec(seed)?)?;
    let selected: Vec<String> = ranking[..sweep.best_size]
        .iter()
        .map(|r| r.feature.clone())
        .collect();
    let chosen = m.select_named(&selected)?;
    Ok((
        chosen,
        SelectionReport {
            variance_dropped,
            correlation_dropped,
            ranking,
            sweep,
            selected,
        },
    ))
}

/// Phase I matrix on the complete-effective-mass subset plus one candidate
/// column per audited feature.
pub fn audit_inputs(
    curated: &[CuratedRecord],
    registry: &RiskRegistry,
    candidates: &[String],
    cfg: &FeatureConfig,
    table: &ElementTable,
) -> Result<(FeatureMatrix, Vec<(String, Vec<f64>)>)> {
    let subset = effective_mass_subset(curated);
    let base = build_matrix(&subset, Phase::I, cfg, table)?;
    let names = if candidates.is_empty() {
        registry.high_risk()
    } else {
        candidates.to_vec()
    };
    let cols = names
        .into_iter()
        .map(|name| {
            let col = subset
                .iter()
                .map(|r| {
                    r.number(&name).filter(|v| v.is_finite()).ok_or_else(|| Error::Data {
                        id: r.id().to_string(),
                        message: format!("audit candidate `{name}` missing"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((name, col))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub n: usize,
    pub train_fraction_permille: u32,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitReport {
    pub fn new(split: &SplitSpec, ids: &[String]) -> Self {
        Self {
            n: split.n,
            train_fraction_permille: split.train_fraction_permille,
            train_ids: split.train.iter().map(|&i| ids[i].clone()).collect(),
            test_ids: split.test.iter().map(|&i| ids[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub phase: Phase,
    pub model: String,
    pub feature_names: Vec<String>,
    pub instances: Vec<ShapExplanation>,
    pub global: GlobalImportance,
}

/// Explains the first `max_instances` rows of `test`.
pub fn shap_report(
    model: &FittedModel,
    test: &FeatureMatrix,
    phase: Phase,
    max_instances: usize,
) -> Result<ShapReport> {
    let rows: Vec<usize> = (0..test.n_rows().min(max_instances)).collect();
    let instances = explain_matrix(model, &test.select_rows(&rows))?;
    let global = global_importance(&model.feature_names, &instances)?;
    Ok(ShapReport {
        phase,
        model: model.spec.name.clone(),
        feature_names: model.feature_names.clone(),
        instances,
        global,
    })
}

/// Sha256 over the canonical config JSON with input paths replaced by their
/// file names and content hashes.
pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    let inputs = cfg
        .inputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            Ok(serde_json::json!({
                "name": p.file_name().map(|n| n.to_string_lossy().into_owned()),
                "sha256": sha256_hex(&bytes),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    v["inputs"] = serde_json::Value::Array(inputs);
    Ok(sha256_hex(&serde_json::to_vec(&v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub seed: u64,
    pub curated: usize,
    pub featurized: usize,
    pub selected_features: usize,
    /// Best R² per (family, phase) as `"family/phase"`.
    pub best_r2: BTreeMap<String, f64>,
    pub audit: BTreeMap<String, Verdict>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn csv_bytes(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf)?;
    Ok(buf)
}

fn jsonl_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Runs every stage into `out`. Validation problems surface before any
/// compute; a stage error leaves `FAILED.json` next to the partial outputs.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let mut bundle = Bundle::create(out, &hash, cfg.seed)?;
    let mut current = "ingest";
    let result = run_stages(cfg, &mut bundle, &mut current);
    match result {
        Ok(mut summary) => {
            bundle.write_manifest()?;
            summary.config_hash = hash;
            Ok(summary)
        }
        Err(e) => {
            let e = stage(current, Err::<(), _>(e)).unwrap_err();
            if let Error::Stage { stage, source } = &e {
                bundle.write_failure(stage, source)?;
            }
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &PipelineConfig,
    bundle: &mut Bundle,
    current: &mut &'static str,
) -> Result<PipelineSummary> {
    let seed = cfg.seed;
    let table = ElementTable::embedded();
    bundle.write_json("config.resolved.json", cfg)?;

    *current = "ingest";
    let (raw, merge_report) = ingest_sources(&cfg.inputs)?;
    info!("ingest: {} records after merge and dedup", raw.len());
    bundle.write_bytes("ingest/records.jsonl", &jsonl_bytes(|b| write_jsonl(b, &raw))?)?;
    bundle.write_json("ingest/merge_report.json", &merge_report)?;

    *current = "curate";
    let (curated, funnel) = apply_filters(raw.clone(), &cfg.filter);
    info!("curate: {} records survive", curated.len());
    bundle.write_bytes("curate/curated.jsonl", &jsonl_bytes(|b| write_curated(b, &curated))?)?;
    bundle.write_json("curate/funnel.json", &funnel)?;

    *current = "integrity";
    let integrity = integrity_report(&raw, &curated, &cfg.integrity)?;
    bundle.write_json("integrity.json", &integrity)?;

    *current = "features";
    let (matrices, excluded) = featurize(&curated, &cfg.features, table)?;
    for (phase, m) in &matrices {
        bundle.write_bytes(&format!("features/phase_{}.csv", phase.label()), &csv_bytes(m)?)?;
        bundle.write_json(&format!("features/phase_{}.meta.json", phase.label()), &m.meta())?;
    }
    bundle.write_json("features/excluded.json", &serde_json::json!({ "excluded": excluded }))?;
    let ids = matrices[&Phase::I].row_ids().to_vec();
    let split = make_split(ids.len(), cfg.train_fraction, seed)?;
    bundle.write_json("split.json", &SplitReport::new(&split, &ids))?;

    *current = "select";
    let (phase3, selection) = select_features(&matrices[&Phase::III], &split, &cfg.select, seed)?;
    info!("select: {} of {} features kept", selection.selected.len(), matrices[&Phase::III].n_cols());
    bundle.write_json(
        "select/filters.json",
        &serde_json::json!({
            "variance_dropped": selection.variance_dropped,
            "correlation_dropped": selection.correlation_dropped,
        }),
    )?;
    bundle.write_json("select/ranking.json", &serde_json::json!({ "ranking": selection.ranking }))?;
    bundle.write_json(
        "select/sweep.json",
        &serde_json::json!({ "sweep": selection.sweep, "selected": selection.selected }),
    )?;

    *current = "train";
    let phase_matrices: Vec<(Phase, &FeatureMatrix)> = vec![
        (Phase::I, &matrices[&Phase::I]),
        (Phase::II, &matrices[&Phase::II]),
        (Phase::III, &phase3),
    ];
    let specs = cfg.train.specs(seed)?;
    let jobs: Vec<(Phase, &FeatureMatrix, &crate::learn::ModelSpec)> = phase_matrices
        .iter()
        .flat_map(|&(p, m)| specs.iter().map(move |s| (p, m, s)))
        .collect();
    let fits = jobs
        .par_iter()
        .map(|&(p, m, s)| {
            let (model, metrics, pred) = train_and_evaluate(s, m, &split)?;
            Ok((p, model, metrics, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    let comparison = PhaseComparison::new(
        fits.iter()
            .map(|(p, model, metrics, _)| ComparisonEntry {
                model: model.spec.name.clone(),
                family: model.spec.family.clone(),
                profile: model.spec.profile.clone(),
                phase: p.label().to_string(),
                n_features: model.feature_names.len(),
                metrics: *metrics,
                best: false,
            })
            .collect(),
    );
    bundle.write_json("train/phase_comparison.json", &comparison)?;
    let test_ids: Vec<String> = split.test.iter().map(|&i| ids[i].clone()).collect();
    let mut residuals: BTreeMap<String, ResidualSummary> = BTreeMap::new();
    let mut best_r2 = BTreeMap::new();
    for (entry, (p, _, _, pred)) in comparison.entries.iter().zip(&fits) {
        if !entry.best {
            continue;
        }
        let m = phase_matrices.iter().find(|(q, _)| q == p).map(|(_, m)| *m).unwrap();
        let y_test: Vec<f64> = split.test.iter().map(|&i| m.target()[i]).collect();
        let (csv, summary) = emit_parity_and_residuals(&test_ids, &y_test, pred)?;
        let key = format!("{}/{}", entry.family, entry.phase);
        bundle.write_bytes(&format!("train/parity_{}_{}.csv", entry.family, entry.phase), &csv)?;
        residuals.insert(key.clone(), summary);
        best_r2.insert(key, entry.metrics.r2);
    }
    bundle.write_json(
        "train/residuals.json",
        &serde_json::json!({ "residual": "prediction - truth", "summaries": residuals }),
    )?;

    *current = "shap";
    for &(p, m) in &phase_matrices {
        let best = comparison
            .entries
            .iter()
            .zip(&fits)
            .filter(|(e, (q, model, _, _))| *q == p && e.best && model.spec.is_tree_based())
            .fold(None::<(&ComparisonEntry, &FittedModel)>, |acc, (e, (_, model, _, _))| match acc {
                Some((b, _)) if b.metrics.r2 >= e.metrics.r2 => acc,
                _ => Some((e, model)),
            });
        if let Some((_, model)) = best {
            let test = m.select_rows(&split.test);
            let report = shap_report(model, &test, p, cfg.shap.max_instances)?;
            bundle.write_json(&format!("shap/phase_{}.json", p.label()), &report)?;
        }
    }

    *current = "audit";
    let registry = cfg.registry();
    let (base, candidates) =
        audit_inputs(&curated, &registry, &cfg.audit.candidates, &cfg.features, table)?;
    let audit_split = make_split(base.n_rows(), cfg.train_fraction, seed)?;
    let audit: LeakageReport = run_audit(&base, &candidates, &registry, &cfg.audit, &audit_split, seed)?;
    bundle.write_json(
        "audit/audit.json",
        &serde_json::json!({
            "subset_rows": base.n_rows(),
            "split": SplitReport::new(&audit_split, base.row_ids()),
            "report": audit,
        }),
    )?;

    let summary = PipelineSummary {
        config_hash: String::new(),
        seed,
        curated: curated.len(),
        featurized: ids.len(),
        selected_features: selection.selected.len(),
        best_r2,
        audit: audit
            .candidates
            .iter()
            .map(|c| (c.feature.clone(), c.verdict))
            .collect(),
    };
    Ok(summary)
}

/// Result of a completed run, read back from the bundle.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
