//! Variance and correlation filtering, boosted-gain ranking and the top-k sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{
    fit_gbt, train_and_evaluate, GbtParams, ModelSpec, SplitSpec, TrainingSet, TreeParams,
};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub variance_threshold: f64,
    pub correlation_cutoff: f64,
    pub sweep_start: usize,
    pub sweep_step: usize,
    pub ranking_model: GbtParams,
    /// Preset trained at every sweep size.
    pub sweep_model: String,
    /// Replaces the sweep preset's tree count when set.
    pub sweep_n_estimators: Option<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            variance_threshold: 0.001,
            correlation_cutoff: 0.95,
            sweep_start: 10,
            sweep_step: 5,
            ranking_model: GbtParams {
                n_estimators: 200,
                learning_rate: 0.1,
                tree: TreeParams {
                    max_depth: Some(6),
                    ..TreeParams::default()
                },
                seed: 42,
            },
            sweep_model: "xgb-conservative".into(),
            sweep_n_estimators: None,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_threshold >= 0.0) {
            return Err(Error::Config("variance_threshold must be >= 0".into()));
        }
        if !(self.correlation_cutoff > 0.0 && self.correlation_cutoff <= 1.0) {
            return Err(Error::Config("correlation_cutoff must be in (0, 1]".into()));
        }
        if self.sweep_step == 0 || self.sweep_start == 0 {
            return Err(Error::Config("sweep_start and sweep_step must be >= 1".into()));
        }
        self.sweep_spec(0).map(|_| ())
    }

    pub fn sweep_spec(&self, seed: u64) -> Result<ModelSpec> {
        let spec = crate::learn::preset_or_err(&self.sweep_model)?.with_seed(seed);
        Ok(match self.sweep_n_estimators {
            Some(n) => spec.with_estimators(n),
            None => spec,
        })
    }
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDrop {
    pub feature: String,
    pub variance: f64,
}

/// Removes columns whose population variance is below `threshold`.
pub fn variance_filter(m: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<VarianceDrop>)> {
    if m.n_rows() == 0 || m.n_cols() == 0 {
        return Err(Error::InvalidInput("variance filter on an empty matrix".into()));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..m.n_cols() {
        let var = population_variance(&m.column(j));
        let constant = {
            let c = m.column(j);
            c.iter().all(|v| *v == c[0])
        };
        if var < threshold || constant {
            dropped.push(VarianceDrop {
                feature: m.column_names()[j].clone(),
                variance: var,
            });
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::InvalidInput("variance filter dropped every column".into()));
    }
    Ok((m.select_columns(&keep), dropped))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDrop {
    pub kept: String,
    pub dropped: String,
    pub rho: f64,
}

/// Scans left to right and drops any column with |ρ| ≥ `cutoff` against an
/// earlier surviving column.
pub fn correlation_filter(
    m: &FeatureMatrix,
    cutoff: f64,
) -> Result<(FeatureMatrix, Vec<CorrelationDrop>)> {
    if m.n_rows() < 2 {
        return Err(Error::InvalidInput("correlation filter needs at least 2 rows".into()));
    }
    let cols = m.columns();
    let names = m.column_names();
    if let Some(j) = cols.iter().position(|c| c.iter().all(|v| *v == c[0])) {
        return Err(Error::InvalidInput(format!(
            "column `{}` has zero variance; run the variance filter first",
            names[j]
        )));
    }
    let mut keep: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..cols.len() {
        let hit = keep.iter().find_map(|&k| {
            let rho = pearson(&cols[k], &cols[j])?;
            (rho.abs() >= cutoff).then_some((k, rho))
        });
        match hit {
            Some((k, rho)) => dropped.push(CorrelationDrop {
                kept: names[k].clone(),
                dropped: names[j].clone(),
                rho,
            }),
            None => keep.push(j),
        }
    }
    Ok((m.select_columns(&keep), dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub total_gain: f64,
}

/// Ranks columns by the total split gain of one boosted fit on the whole matrix.
pub fn importance_ranking(m: &FeatureMatrix, params: &GbtParams) -> Result<Vec<RankedFeature>> {
    let data = TrainingSet::from_matrix(m);
    let fit = fit_gbt(&data, m.target(), params)?;
    let mut gain = vec![0.0; m.n_cols()];
    for tree in &fit.model.trees {
        for node in &tree.nodes {
            if let Some(f) = node.feature {
                gain[f] += node.gain;
            }
        }
    }
    let mut ranked: Vec<RankedFeature> = m
        .column_names()
        .iter()
        .zip(gain)
        .map(|(n, g)| RankedFeature {
            feature: n.clone(),
            total_gain: g,
        })
        .collect();
    ranked.sort_by(|a, b| b.total_gain.total_cmp(&a.total_gain));
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub best_size: usize,
}

/// Subset sizes `start, start+step, ...` capped at `p`, always ending at `p`.
pub fn sweep_sizes(p: usize, start: usize, step: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (start..=p).step_by(step.max(1)).collect();
    if ks.last() != Some(&p) && start <= p {
        ks.push(p);
    }
    if ks.is_empty() && p > 0 {
        ks.push(p);
    }
    ks
}

pub fn subset_sweep(
    m: &FeatureMatrix,
    ranking: &[RankedFeature],
    cfg: &SelectConfig,
    split: &SplitSpec,
    model: &ModelSpec,
) -> Result<SweepResult> {
    let order: Vec<&str> = ranking.iter().map(|r| r.feature.as_str()).collect();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    let mut cols: Vec<&str> = m.column_names().iter().map(String::as_str).collect();
    cols.sort_unstable();
    if sorted != cols {
        return Err(Error::InvalidInput("ranking must cover every matrix column exactly once".into()));
    }
    let ks = sweep_sizes(m.n_cols(), cfg.sweep_start, cfg.sweep_step);
    let points = ks
        .par_iter()
        .map(|&k| {
            let names: Vec<String> = order[..k].iter().map(|s| s.to_string()).collect();
            let sub = m.select_named(&names)?;
            let (_, metrics, _) = train_and_evaluate(model, &sub, split)?;
            Ok(SweepPoint {
                k,
                r2: metrics.r2,
                mae: metrics.mae,
                mse: metrics.mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_size = points
        .iter()
        .fold(None::<SweepPoint>, |best, p| match best {
            Some(b) if b.r2 >= p.r2 => Some(b),
            _ => Some(*p),
        })
        .map_or(0, |p| p.k);
    Ok(SweepResult { points, best_size })
}
