use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::Metrics;
use crate::matrix::fmt_f64;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory writer that stamps JSON objects and records artifact hashes.
pub struct Bundle {
    root: PathBuf,
    config_hash: String,
    seed: u64,
    artifacts: BTreeMap<String, String>,
}

impl Bundle {
    /// Opens `root` for a full run, removing markers left by an earlier one.
    pub fn create(root: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        let b = Self::open(root, config_hash, seed)?;
        for stale in ["FAILED.json", "manifest.json"] {
            let p = root.join(stale);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        Ok(b)
    }

    /// Opens `root` without touching existing files.
    pub fn open(root: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            config_hash: config_hash.to_string(),
            seed,
            artifacts: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn stamp(&self, value: Json) -> Json {
        stamp(value, &self.config_hash, self.seed)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let v = self.stamp(serde_json::to_value(value)?);
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_manifest(&self) -> Result<PathBuf> {
        let manifest = serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "artifacts": self.artifacts,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn write_failure(&self, stage: &str, error: &Error) -> Result<PathBuf> {
        let v = self.stamp(serde_json::json!({
            "stage": stage,
            "error": error.to_string(),
            "completed_artifacts": self.artifacts.keys().collect::<Vec<_>>(),
        }));
        let path = self.root.join("FAILED.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&v)?)?;
        Ok(path)
    }
}

/// Adds `config_hash` and `seed` to JSON objects; other values pass through.
pub fn stamp(value: Json, config_hash: &str, seed: u64) -> Json {
    match value {
        Json::Object(mut m) => {
            m.insert("config_hash".into(), Json::String(config_hash.to_string()));
            m.insert("seed".into(), Json::from(seed));
            Json::Object(m)
        }
        other => other,
    }
}

pub const RESIDUAL_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    /// Residual is `prediction - truth`, in eV.
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
}

/// Parity CSV `(id, y_true, y_pred)` and the residual summary.
pub fn emit_parity_and_residuals(
    ids: &[String],
    y_true: &[f64],
    y_pred: &[f64],
) -> Result<(Vec<u8>, ResidualSummary)> {
    if ids.len() != y_true.len() || y_true.len() != y_pred.len() || ids.is_empty() {
        return Err(Error::InvalidInput("parity inputs must be non-empty and aligned".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "y_true", "y_pred"])?;
    for ((id, t), p) in ids.iter().zip(y_true).zip(y_pred) {
        w.write_record([id.as_str(), &fmt_f64(*t), &fmt_f64(*p)])?;
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;

    let res: Vec<f64> = y_true.iter().zip(y_pred).map(|(t, p)| p - t).collect();
    let n = res.len();
    let mean = res.iter().sum::<f64>() / n as f64;
    let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let min = res.iter().copied().fold(f64::INFINITY, f64::min);
    let max = res.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bin_of = |r: f64| (r / RESIDUAL_BIN_WIDTH).floor() as i64;
    let (k0, k1) = (bin_of(min), bin_of(max));
    let mut bins: Vec<HistogramBin> = (k0..=k1)
        .map(|k| HistogramBin {
            lo: k as f64 * RESIDUAL_BIN_WIDTH,
            hi: (k + 1) as f64 * RESIDUAL_BIN_WIDTH,
            count: 0,
        })
        .collect();
    for r in &res {
        bins[(bin_of(*r) - k0) as usize].count += 1;
    }
    Ok((
        csv_bytes,
        ResidualSummary {
            n,
            mean,
            std,
            min,
            max,
            bin_width: RESIDUAL_BIN_WIDTH,
            bins,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub model: String,
    pub family: String,
    pub profile: String,
    pub phase: String,
    pub n_features: usize,
    pub metrics: Metrics,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub entries: Vec<ComparisonEntry>,
}

impl PhaseComparison {
    /// Marks the highest-R² profile per (family, phase); the earliest wins ties.
    pub fn new(mut entries: Vec<ComparisonEntry>) -> Self {
        let mut best: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            let key = (e.family.clone(), e.phase.clone());
            match best.get(&key) {
                Some(&j) if entries[j].metrics.r2 >= e.metrics.r2 => {}
                _ => {
                    best.insert(key, i);
                }
            }
        }
        for e in entries.iter_mut() {
            e.best = false;
        }
        for &i in best.values() {
            entries[i].best = true;
        }
        Self { entries }
    }

    pub fn best(&self) -> impl Iterator<Item = &ComparisonEntry> {
        self.entries.iter().filter(|e| e.best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn histogram_partitions_residuals(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..200)
        ) {
            let ids: Vec<String> = (0..pairs.len()).map(|i| i.to_string()).collect();
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (_, s) = emit_parity_and_residuals(&ids, &t, &p).unwrap();
            prop_assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), s.n);
            prop_assert!(s.bins[0].lo <= s.min && s.max < s.bins.last().unwrap().hi);
            prop_assert!(s.bins[0].count > 0 && s.bins.last().unwrap().count > 0);
            for w in s.bins.windows(2) {
                prop_assert_eq!(w[0].hi, w[1].lo);
            }
        }
    }

    #[test]
    fn perfect_model_residuals() {
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let y = [1.0, 2.0, 3.0];
        let (csv, s) = emit_parity_and_residuals(&ids, &y, &y).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));
        assert_eq!(s.bins.len(), 1);
        assert!(String::from_utf8(csv).unwrap().starts_with("id,y_true,y_pred\n0,1,1\n"));
    }

    #[test]
    fn bins_cover_range() {
        let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let (_, s) = emit_parity_and_residuals(&ids, &[0.0; 4], &[-0.25, 0.0, 0.05, 0.31]).unwrap();
        assert!(s.bins[0].lo <= s.min && s.bins.last().unwrap().hi > s.max);
        assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(s.bins.len(), 7);
    }

    #[test]
    fn one_best_per_family_phase() {
        let m = |r2| Metrics { r2, mae: 0.1, mse: 0.1, residual_mean: 0.0, residual_std: 0.1, n: 3 };
        let e = |model: &str, phase: &str, r2| ComparisonEntry {
            model: model.into(),
            family: "rf".into(),
            profile: model.into(),
            phase: phase.into(),
            n_features: 1,
            metrics: m(r2),
            best: false,
        };
        let pc = PhaseComparison::new(vec![e("a", "I", 0.8), e("b", "I", 0.9), e("c", "I", 0.9), e("a", "II", 0.1)]);
        let best: Vec<(&str, &str)> = pc.best().map(|e| (e.model.as_str(), e.phase.as_str())).collect();
        assert_eq!(best, vec![("b", "I"), ("a", "II")]);
    }
}
