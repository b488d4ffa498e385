//! Model zoo: ridge, CART, random forest and gradient boosting, plus the
//! named hyperparameter presets and the train/test protocol.

pub mod ensemble;
pub mod metrics;
pub mod ridge;
pub mod split;
pub mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub use ensemble::{fit_forest, fit_gbt, BoostedFit, Ensemble, EnsembleKind, ForestParams, GbtParams};
pub use metrics::{regression_metrics, Metrics};
pub use ridge::{fit_ridge, RidgeModel, RidgeParams, Standardizer};
pub use split::{make_split, SplitSpec};
pub use tree::{fit_tree, Node, RegressionTree, TrainingSet, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerParams {
    Ridge(RidgeParams),
    Forest(ForestParams),
    Gbt(GbtParams),
}

/// A learner plus the labels used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: String,
    pub profile: String,
    pub params: LearnerParams,
    /// Hyperparameters carried for the record that this learner does not use.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inert: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.params {
            LearnerParams::Ridge(_) => {}
            LearnerParams::Forest(p) => p.seed = seed,
            LearnerParams::Gbt(p) => p.seed = seed,
        }
        self
    }

    /// Overrides the tree count; used to keep tests and audits cheap.
    pub fn with_estimators(mut self, n: usize) -> Self {
        match &mut self.params {
            LearnerParams::Ridge(_) => {}
            LearnerParams::Forest(p) => p.n_estimators = n,
            LearnerParams::Gbt(p) => p.n_estimators = n,
        }
        self
    }

    pub fn is_tree_based(&self) -> bool {
        !matches!(self.params, LearnerParams::Ridge(_))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.params {
            LearnerParams::Ridge(p) if !(p.alpha >= 0.0) => {
                Err(Error::Config(format!("{}: alpha must be >= 0", self.name)))
            }
            LearnerParams::Forest(p) if p.n_estimators == 0 => {
                Err(Error::Config(format!("{}: n_estimators must be >= 1", self.name)))
            }
            LearnerParams::Forest(p) => p.tree.validate(),
            LearnerParams::Gbt(p)
                if p.n_estimators == 0 || !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) =>
            {
                Err(Error::Config(format!(
                    "{}: need n_estimators >= 1 and learning_rate in (0, 1]",
                    self.name
                )))
            }
            LearnerParams::Gbt(p) => p.tree.validate(),
            _ => Ok(()),
        }
    }
}

pub const PRESET_NAMES: [&str; 10] = [
    "ridge",
    "rf-conservative",
    "rf-balanced",
    "rf-aggressive",
    "xgb-conservative",
    "xgb-balanced",
    "xgb-aggressive",
    "cat-conservative",
    "cat-balanced",
    "cat-aggressive",
];

fn forest(n: usize, depth: Option<usize>, leaf: usize) -> LearnerParams {
    LearnerParams::Forest(ForestParams {
        n_estimators: n,
        tree: TreeParams {
            max_depth: depth,
            min_samples_leaf: leaf,
            min_samples_split: 2,
        },
        ..ForestParams::default()
    })
}

fn boosted(n: usize, eta: f64, depth: usize) -> LearnerParams {
    LearnerParams::Gbt(GbtParams {
        n_estimators: n,
        learning_rate: eta,
        tree: TreeParams {
            max_depth: Some(depth),
            ..TreeParams::default()
        },
        ..GbtParams::default()
    })
}

/// Named hyperparameter profile, or `None` for an unknown name.
pub fn preset(name: &str) -> Option<ModelSpec> {
    let (family, profile) = name.split_once('-').unwrap_or((name, "default"));
    let (params, l2) = match name {
        "ridge" => (LearnerParams::Ridge(RidgeParams::default()), None),
        "rf-conservative" => (forest(500, Some(13), 5), None),
        "rf-balanced" => (forest(600, None, 1), None),
        "rf-aggressive" => (forest(700, None, 1), None),
        "xgb-conservative" => (boosted(500, 0.05, 6), None),
        "xgb-balanced" => (boosted(600, 0.10, 8), None),
        "xgb-aggressive" => (boosted(700, 0.30, 6), None),
        "cat-conservative" => (boosted(1000, 0.01, 6), Some(5.0)),
        "cat-balanced" => (boosted(3000, 0.05, 10), Some(1.0)),
        "cat-aggressive" => (boosted(2000, 0.03, 8), Some(3.0)),
        _ => return None,
    };
    let family = match family {
        "rf" => "random_forest",
        "xgb" => "xgboost_like",
        "cat" => "catboost_like",
        other => other,
    };
    Some(ModelSpec {
        name: name.to_string(),
        family: family.to_string(),
        profile: profile.to_string(),
        params,
        inert: l2.map(|v| BTreeMap::from([("l2_leaf_reg".to_string(), v)])).unwrap_or_default(),
    })
}

pub fn preset_or_err(name: &str) -> Result<ModelSpec> {
    preset(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown model preset `{name}`; expected one of {}",
            PRESET_NAMES.join(", ")
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Learned {
    Ridge(RidgeModel),
    Ensemble(Ensemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    /// Rows the model (and any standardizer) was fitted on.
    pub n_train: usize,
    pub learned: Learned,
    /// Training MSE after each boosting round.
    pub train_loss: Option<Vec<f64>>,
}

/// Serialized form: `{kind, params, base_value, trees: [{nodes}]}` for ensembles.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    kind: String,
    params: ModelSpec,
    feature_names: Vec<String>,
    n_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trees: Option<Vec<RegressionTree>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ridge: Option<RidgeModel>,
}

impl FittedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.learned {
            Learned::Ridge(m) => m.predict(x),
            Learned::Ensemble(e) => e.predict(x),
        }
    }

    /// Predicts every row; the matrix columns must match the training columns.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.column_names() != self.feature_names.as_slice() {
            return Err(Error::InvalidInput(format!(
                "model `{}` expects columns {:?}, got {:?}",
                self.spec.name,
                self.feature_names,
                m.column_names()
            )));
        }
        Ok((0..m.n_rows()).map(|i| self.predict_row(m.row(i))).collect())
    }

    pub fn ensemble(&self) -> Option<&Ensemble> {
        match &self.learned {
            Learned::Ensemble(e) => Some(e),
            Learned::Ridge(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = match &self.learned {
            Learned::Ridge(r) => ModelDoc {
                kind: "ridge".into(),
                params: self.spec.clone(),
                feature_names: self.feature_names.clone(),
                n_train: self.n_train,
                base_value: Some(r.intercept),
                learning_rate: None,
                trees: None,
                ridge: Some(r.clone()),
            },
            Learned::Ensemble(e) => ModelDoc {
                kind: match e.kind {
                    EnsembleKind::Forest => "forest_average".into(),
                    EnsembleKind::Boosted => "boosted_sum".into(),
                },
                params: self.spec.clone(),
                feature_names: self.feature_names.clone(),
                n_train: self.n_train,
                base_value: Some(e.base_value),
                learning_rate: Some(e.learning_rate),
                trees: Some(e.trees.clone()),
                ridge: None,
            },
        };
        serde_json::to_value(doc).expect("model documents serialize")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_value(value)?;
        let p = doc.feature_names.len();
        let learned = match doc.kind.as_str() {
            "ridge" => {
                let r = doc
                    .ridge
                    .ok_or_else(|| Error::InvalidInput("ridge model without coefficients".into()))?;
                if r.coefficients.len() != p || r.standardizer.mean.len() != p {
                    return Err(Error::InvalidInput("ridge coefficient count mismatch".into()));
                }
                Learned::Ridge(r)
            }
            kind @ ("forest_average" | "boosted_sum") => {
                let trees = doc.trees.unwrap_or_default();
                if trees.is_empty() {
                    return Err(Error::InvalidInput("ensemble without trees".into()));
                }
                for t in &trees {
                    RegressionTree::from_nodes(t.nodes.clone())?;
                    if t.used_features().iter().any(|&f| f >= p) {
                        return Err(Error::InvalidInput("tree references unknown feature".into()));
                    }
                }
                Learned::Ensemble(Ensemble {
                    kind: if kind == "forest_average" {
                        EnsembleKind::Forest
                    } else {
                        EnsembleKind::Boosted
                    },
                    base_value: doc.base_value.unwrap_or(0.0),
                    learning_rate: doc.learning_rate.unwrap_or(1.0),
                    trees,
                })
            }
            other => return Err(Error::InvalidInput(format!("unknown model kind `{other}`"))),
        };
        Ok(Self {
            spec: doc.params,
            feature_names: doc.feature_names,
            n_train: doc.n_train,
            learned,
            train_loss: None,
        })
    }
}

/// Fits `spec` on every row of `train`.
pub fn fit_model(spec: &ModelSpec, train: &FeatureMatrix) -> Result<FittedModel> {
    spec.validate()?;
    let y = train.target();
    let (learned, train_loss) = match &spec.params {
        LearnerParams::Ridge(p) => {
            let rows: Vec<&[f64]> = (0..train.n_rows()).map(|i| train.row(i)).collect();
            (Learned::Ridge(fit_ridge(&rows, y, p)?), None)
        }
        LearnerParams::Forest(p) => {
            let data = TrainingSet::from_matrix(train);
            (Learned::Ensemble(fit_forest(&data, y, p)?), None)
        }
        LearnerParams::Gbt(p) => {
            let data = TrainingSet::from_matrix(train);
            let fit = fit_gbt(&data, y, p)?;
            (Learned::Ensemble(fit.model), Some(fit.train_loss))
        }
    };
    Ok(FittedModel {
        spec: spec.clone(),
        feature_names: train.column_names().to_vec(),
        n_train: train.n_rows(),
        learned,
        train_loss,
    })
}

pub fn evaluate(model: &FittedModel, test: &FeatureMatrix) -> Result<Metrics> {
    let pred = model.predict(test)?;
    regression_metrics(test.target(), &pred)
}

/// Fits on the training rows of `split` and scores on its test rows.
pub fn train_and_evaluate(
    spec: &ModelSpec,
    m: &FeatureMatrix,
    split: &SplitSpec,
) -> Result<(FittedModel, Metrics, Vec<f64>)> {
    if split.n != m.n_rows() {
        return Err(Error::InvalidInput(format!(
            "split covers {} rows, matrix has {}",
            split.n,
            m.n_rows()
        )));
    }
    let train = m.select_rows(&split.train);
    let test = m.select_rows(&split.test);
    let model = fit_model(spec, &train)?;
    debug_assert_eq!(model.n_train, split.train.len());
    let pred = model.predict(&test)?;
    let metrics = regression_metrics(test.target(), &pred)?;
    Ok((model, metrics, pred))
}
