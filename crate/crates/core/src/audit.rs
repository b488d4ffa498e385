//! Leakage audit: risk registry, leakage-free baseline and per-candidate impact.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PHASE1_FEATURES;
use crate::ingest::{AVG_ELEC_MASS, AVG_HOLE_MASS, EPSX, EPSY, EPSZ};
use crate::learn::{preset_or_err, train_and_evaluate, Metrics, ModelSpec, SplitSpec};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub level: RiskLevel,
    pub rationale: String,
}

/// Feature name to risk level. Names not listed are low risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRegistry {
    pub entries: BTreeMap<String, RiskEntry>,
}

impl Default for RiskRegistry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for f in PHASE1_FEATURES {
            entries.insert(
                f.to_string(),
                RiskEntry {
                    level: RiskLevel::Low,
                    rationale: "structural, thermodynamic or mechanical descriptor".into(),
                },
            );
        }
        for f in [EPSX, EPSY, EPSZ] {
            entries.insert(
                f.to_string(),
                RiskEntry {
                    level: RiskLevel::Medium,
                    rationale: "physical correlation with the gap without mathematical encoding".into(),
                },
            );
        }
        for f in [AVG_ELEC_MASS, AVG_HOLE_MASS] {
            entries.insert(
                f.to_string(),
                RiskEntry {
                    level: RiskLevel::High,
                    rationale: "derived from band-structure curvature at the band edges".into(),
                },
            );
        }
        Self { entries }
    }
}

impl RiskRegistry {
    pub fn level(&self, feature: &str) -> RiskLevel {
        self.entries.get(feature).map_or(RiskLevel::Low, |e| e.level)
    }

    pub fn with_level(mut self, feature: &str, level: RiskLevel, rationale: &str) -> Self {
        self.entries.insert(
            feature.to_string(),
            RiskEntry {
                level,
                rationale: rationale.to_string(),
            },
        );
        self
    }

    pub fn high_risk(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.level == RiskLevel::High)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Errors if any column of `m` is registered high risk.
    pub fn assert_clean(&self, m: &FeatureMatrix) -> Result<()> {
        let bad: Vec<&str> = m
            .column_names()
            .iter()
            .filter(|c| self.level(c) == RiskLevel::High)
            .map(String::as_str)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "baseline matrix contains high-risk columns: {}",
                bad.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagThresholds {
    pub min_delta_r2: f64,
    /// Relative MAE reduction, `1 - candidate_mae / baseline_mae`.
    pub min_mae_reduction: f64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        Self {
            min_delta_r2: 0.05,
            min_mae_reduction: 0.25,
        }
    }
}

impl FlagThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.min_delta_r2 >= 0.0 && self.min_mae_reduction >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config("flag thresholds must be >= 0".into()))
        }
    }

    pub fn exceeded(&self, delta_r2: f64, mae_ratio: f64) -> bool {
        delta_r2 >= self.min_delta_r2 && 1.0 - mae_ratio >= self.min_mae_reduction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Flagged,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImpact {
    pub metrics: Metrics,
    pub delta_r2: f64,
    pub mae_ratio: f64,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub feature: String,
    pub models: BTreeMap<String, ModelImpact>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub thresholds: FlagThresholds,
    pub models: Vec<String>,
    pub baseline_columns: Vec<String>,
    pub baseline: BTreeMap<String, Metrics>,
    pub candidates: Vec<CandidateEntry>,
}

impl LeakageReport {
    pub fn verdict(&self, feature: &str) -> Option<Verdict> {
        self.candidates
            .iter()
            .find(|c| c.feature == feature)
            .map(|c| c.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub thresholds: FlagThresholds,
    /// Model presets evaluated for every candidate.
    pub models: Vec<String>,
    /// Replaces the preset tree counts when set.
    pub n_estimators: Option<usize>,
    /// Candidates to test; empty means every registry-high feature.
    pub candidates: Vec<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            thresholds: FlagThresholds::default(),
            models: vec!["rf-conservative".into(), "xgb-conservative".into()],
            n_estimators: None,
            candidates: Vec::new(),
        }
    }
}

impl AuditConfig {
    pub fn model_specs(&self, seed: u64) -> Result<Vec<ModelSpec>> {
        if self.models.is_empty() {
            return Err(Error::Config("audit needs at least one model".into()));
        }
        self.models
            .iter()
            .map(|name| {
                let spec = preset_or_err(name)?.with_seed(seed);
                Ok(match self.n_estimators {
                    Some(n) => spec.with_estimators(n),
                    None => spec,
                })
            })
            .collect()
    }
}

fn evaluate_models(
    m: &FeatureMatrix,
    models: &[ModelSpec],
    split: &SplitSpec,
) -> Result<BTreeMap<String, Metrics>> {
    models
        .par_iter()
        .map(|spec| Ok((spec.name.clone(), train_and_evaluate(spec, m, split)?.1)))
        .collect()
}

pub fn baseline_eval(
    m: &FeatureMatrix,
    registry: &RiskRegistry,
    models: &[ModelSpec],
    split: &SplitSpec,
) -> Result<BTreeMap<String, Metrics>> {
    registry.assert_clean(m)?;
    evaluate_models(m, models, split)
}

/// Retrains every model on `base + candidate` with the same split.
pub fn incremental_impact(
    base: &FeatureMatrix,
    name: &str,
    column: &[f64],
    models: &[ModelSpec],
    split: &SplitSpec,
    baseline: &BTreeMap<String, Metrics>,
    thresholds: &FlagThresholds,
) -> Result<CandidateEntry> {
    if column.len() != base.n_rows() {
        return Err(Error::InvalidInput(format!(
            "candidate `{name}` has {} rows, baseline has {}",
            column.len(),
            base.n_rows()
        )));
    }
    if base.column_index(name).is_some() {
        return Err(Error::InvalidInput(format!("candidate `{name}` already in the baseline")));
    }
    let m = base.with_column(name, column)?;
    let metrics = evaluate_models(&m, models, split)?;
    let mut impacts = BTreeMap::new();
    for (model, cm) in metrics {
        let bm = baseline
            .get(&model)
            .ok_or_else(|| Error::Protocol(format!("no baseline for model `{model}`")))?;
        let delta_r2 = cm.r2 - bm.r2;
        let mae_ratio = cm.mae / bm.mae;
        impacts.insert(
            model,
            ModelImpact {
                metrics: cm,
                delta_r2,
                mae_ratio,
                exceeds: thresholds.exceeded(delta_r2, mae_ratio),
            },
        );
    }
    let verdict = flag(&impacts);
    Ok(CandidateEntry {
        feature: name.to_string(),
        models: impacts,
        verdict,
    })
}

/// Flagged when at least half the models (rounding up) exceed both thresholds.
pub fn flag(impacts: &BTreeMap<String, ModelImpact>) -> Verdict {
    let votes = impacts.values().filter(|i| i.exceeds).count();
    let needed = impacts.len().div_ceil(2).max(1);
    if votes >= needed {
        Verdict::Flagged
    } else {
        Verdict::Clean
    }
}

/// Baseline plus one incremental run per candidate column.
pub fn run_audit(
    base: &FeatureMatrix,
    candidates: &[(String, Vec<f64>)],
    registry: &RiskRegistry,
    cfg: &AuditConfig,
    split: &SplitSpec,
    seed: u64,
) -> Result<LeakageReport> {
    cfg.thresholds.validate()?;
    let models = cfg.model_specs(seed)?;
    let baseline = baseline_eval(base, registry, &models, split)?;
    let entries = candidates
        .par_iter()
        .map(|(name, col)| {
            incremental_impact(base, name, col, &models, split, &baseline, &cfg.thresholds)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeakageReport {
        thresholds: cfg.thresholds,
        models: cfg.models.clone(),
        baseline_columns: base.column_names().to_vec(),
        baseline,
        candidates: entries,
    })
}
