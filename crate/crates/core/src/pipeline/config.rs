use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditConfig, RiskLevel, RiskRegistry};
use crate::curate::FilterConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::integrity::IntegrityConfig;
use crate::learn::{preset_or_err, ModelSpec, PRESET_NAMES};
use crate::select::SelectConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub models: Vec<String>,
    /// Replaces every preset's tree count when set.
    pub n_estimators: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            models: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            n_estimators: None,
        }
    }
}

impl TrainConfig {
    pub fn specs(&self, seed: u64) -> Result<Vec<ModelSpec>> {
        if self.models.is_empty() {
            return Err(Error::Config("train.models is empty".into()));
        }
        self.models
            .iter()
            .map(|m| {
                let spec = preset_or_err(m)?.with_seed(seed);
                Ok(match self.n_estimators {
                    Some(n) => spec.with_estimators(n),
                    None => spec,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    /// Test rows explained per phase, taken in ascending row order.
    pub max_instances: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self { max_instances: 200 }
    }
}

/// Whole-run configuration. Input paths are resolved against the directory
/// of the config file; command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train_fraction: f64,
    /// One or two record sources; the second fills gaps in the first.
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub filter: FilterConfig,
    pub features: FeatureConfig,
    pub integrity: IntegrityConfig,
    pub select: SelectConfig,
    pub train: TrainConfig,
    pub shap: ShapConfig,
    pub audit: AuditConfig,
    /// Registry overrides on top of the default risk levels.
    pub risk: BTreeMap<String, RiskLevel>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_fraction: 0.8,
            inputs: Vec::new(),
            output_dir: None,
            filter: FilterConfig::default(),
            features: FeatureConfig::default(),
            integrity: IntegrityConfig::default(),
            select: SelectConfig::default(),
            train: TrainConfig::default(),
            shap: ShapConfig::default(),
            audit: AuditConfig::default(),
            risk: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML (or JSON when the extension is `.json`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs = cfg.inputs.iter().map(|p| base.join(p)).collect();
        cfg.output_dir = cfg.output_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn registry(&self) -> RiskRegistry {
        self.risk.iter().fold(RiskRegistry::default(), |r, (name, level)| {
            r.with_level(name, *level, "configured override")
        })
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() > 2 {
            return Err(Error::Config(format!(
                "expected one or two inputs, got {}",
                self.inputs.len()
            )));
        }
        for p in &self.inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input {} does not exist", p.display())));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        self.filter.validate()?;
        self.features.validate()?;
        self.select.validate()?;
        self.train.specs(self.seed)?;
        self.audit.thresholds.validate()?;
        self.audit.model_specs(self.seed)?;
        if self.shap.max_instances == 0 {
            return Err(Error::Config("shap.max_instances must be >= 1".into()));
        }
        Ok(())
    }
}
