//! Raw-versus-curated diagnostics: two-sample K-S, PCA coverage and range preservation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curate::{canonical_dimensionality, reconstruct_max_efg, CuratedRecord};
use crate::error::{Error, Result};
use crate::ingest::{
    RawRecord, BANDGAP, DENSITY, DIMENSIONALITY, FORMATION_ENERGY, IS_3D, MAX_EFG,
};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (-1)^(k-1) exp(-2k²λ²)`.
/// Returns 1 when the series fails to converge (tiny λ).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
    }
    1.0
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("K-S needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("K-S samples must be finite".into()));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = a[i].min(b[j]);
        while i < n1 && a[i] <= v {
            i += 1;
        }
        while j < n2 && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    let p_value = if d == 0.0 { 1.0 } else { kolmogorov_tail(lambda) };
    Ok(KsResult {
        d_statistic: d,
        p_value,
        n1,
        n2,
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Stops once the off-diagonal Frobenius norm drops below `1e-12 * trace`.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    let trace: f64 = (0..n).map(|i| a[i][i].abs()).sum();
    let off = |a: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p][q] * a[p][q];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= 1e-12 * trace {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
            }
        }
    }
    Ok((0..n).map(|i| a[i][i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub columns: Vec<String>,
    pub n: usize,
    pub explained_variance_ratios: Vec<f64>,
    /// Threshold (as written) to the smallest component count reaching it.
    pub components_for_thresholds: BTreeMap<String, usize>,
}

pub fn pca_on_columns(
    names: &[String],
    columns: &[Vec<f64>],
    standardize: bool,
    thresholds: &[f64],
) -> Result<PcaResult> {
    let p = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    if p == 0 || n < 2 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(
            "PCA needs at least 2 rows, 1 column and a rectangular matrix".into(),
        ));
    }
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("PCA input has missing entries".into()));
    }
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let mut z: Vec<f64> = c.iter().map(|v| v - mean).collect();
            if standardize {
                let sd = (z.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt();
                if sd > 0.0 {
                    z.iter_mut().for_each(|v| *v /= sd);
                }
            }
            z
        })
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let s = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (n - 1) as f64;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let trace: f64 = (0..p).map(|i| cov[i][i]).sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateMatrix);
    }
    let mut eig: Vec<f64> = jacobi_eigenvalues(cov)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMatrix);
    }
    let ratios: Vec<f64> = eig.iter().map(|v| v / total).collect();
    let mut components_for_thresholds = BTreeMap::new();
    for &t in thresholds {
        let mut cum = 0.0;
        let mut k = ratios.len();
        for (i, r) in ratios.iter().enumerate() {
            cum += r;
            if cum >= t - 1e-12 {
                k = i + 1;
                break;
            }
        }
        components_for_thresholds.insert(format!("{t}"), k);
    }
    Ok(PcaResult {
        columns: names.to_vec(),
        n,
        explained_variance_ratios: ratios,
        components_for_thresholds,
    })
}

pub fn pca_explained_variance(
    m: &FeatureMatrix,
    standardize: bool,
    thresholds: &[f64],
) -> Result<PcaResult> {
    pca_on_columns(m.column_names(), &m.columns(), standardize, thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub name: String,
    pub raw_min: f64,
    pub raw_max: f64,
    pub curated_min: f64,
    pub curated_max: f64,
    pub preserved_fraction: f64,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub fn range_preservation(name: &str, raw: &[f64], curated: &[f64]) -> Result<RangeEntry> {
    if raw.is_empty() || curated.is_empty() {
        return Err(Error::InvalidInput(format!("{name}: empty column")));
    }
    if raw.iter().chain(curated).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name}: non-finite values")));
    }
    let (raw_min, raw_max) = min_max(raw);
    let (curated_min, curated_max) = min_max(curated);
    if raw_max == raw_min {
        return Err(Error::ZeroRawRange);
    }
    Ok(RangeEntry {
        name: name.to_string(),
        raw_min,
        raw_max,
        curated_min,
        curated_max,
        preserved_fraction: (curated_max - curated_min) / (raw_max - raw_min),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityConfig {
    pub ks_property: String,
    pub pca_columns: Vec<String>,
    pub pca_standardize: bool,
    pub pca_thresholds: Vec<f64>,
    pub range_properties: Vec<String>,
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        let pca_columns = crate::curate::default_required_fields()
            .into_iter()
            .filter(|f| f != BANDGAP)
            .map(|f| if f == DIMENSIONALITY { IS_3D.to_string() } else { f })
            .collect();
        Self {
            ks_property: BANDGAP.into(),
            pca_columns,
            pca_standardize: true,
            pca_thresholds: vec![0.774, 0.9, 0.95],
            range_properties: vec![BANDGAP.into(), DENSITY.into(), FORMATION_ENERGY.into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub ks: KsResult,
    pub ks_property: String,
    pub pca: PcaResult,
    pub ranges: Vec<RangeEntry>,
}

/// Numeric value of a raw record, deriving `is_3D` and `max_efg` as curation does.
fn raw_value(r: &RawRecord, key: &str) -> Option<f64> {
    match key {
        IS_3D => r
            .text(DIMENSIONALITY)
            .map(|d| if canonical_dimensionality(d) == "3D" { 1.0 } else { 0.0 }),
        MAX_EFG => reconstruct_max_efg(r).ok().flatten(),
        _ => r.number(key),
    }
}

fn column_pair(raw: &[RawRecord], curated: &[CuratedRecord], key: &str) -> (Vec<f64>, Vec<f64>) {
    (
        raw.iter().filter_map(|r| raw_value(r, key)).collect(),
        curated.iter().filter_map(|r| r.number(key)).collect(),
    )
}

/// PCA runs on raw records that carry every configured column.
pub fn integrity_report(
    raw: &[RawRecord],
    curated: &[CuratedRecord],
    cfg: &IntegrityConfig,
) -> Result<IntegrityReport> {
    let (rx, cx) = column_pair(raw, curated, &cfg.ks_property);
    let ks = ks_two_sample(&rx, &cx)?;

    let complete: Vec<Vec<f64>> = raw
        .iter()
        .filter_map(|r| {
            cfg.pca_columns
                .iter()
                .map(|c| raw_value(r, c))
                .collect::<Option<Vec<f64>>>()
        })
        .collect();
    let columns: Vec<Vec<f64>> = (0..cfg.pca_columns.len())
        .map(|j| complete.iter().map(|row| row[j]).collect())
        .collect();
    let pca = pca_on_columns(&cfg.pca_columns, &columns, cfg.pca_standardize, &cfg.pca_thresholds)?;

    let ranges = cfg
        .range_properties
        .iter()
        .map(|p| {
            let (r, c) = column_pair(raw, curated, p);
            range_preservation(p, &r, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntegrityReport {
        ks,
        ks_property: cfg.ks_property.clone(),
        pca,
        ranges,
    })
}
