use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, FeatureSampler, RegressionTree, TrainingSet, TreeParams};
use crate::error::{Error, Result};
use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    /// Average of independently grown trees.
    #[serde(rename = "forest_average")]
    Forest,
    /// Shrunken sum of trees fitted to residuals.
    #[serde(rename = "boosted_sum")]
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub kind: EnsembleKind,
    /// Initial prediction for boosting; 0 for forests.
    pub base_value: f64,
    /// 1 for forests.
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl Ensemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::Forest => {
                self.base_value
                    + self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
            }
            EnsembleKind::Boosted => {
                self.base_value
                    + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
            }
        }
    }

    /// Weight each tree's output carries in the prediction.
    pub fn tree_weight(&self) -> f64 {
        match self.kind {
            EnsembleKind::Forest => 1.0 / self.trees.len() as f64,
            EnsembleKind::Boosted => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_estimators: usize,
    #[serde(flatten)]
    pub tree: TreeParams,
    pub bootstrap: bool,
    /// Features drawn at each split; `None` means `max(1, p / 3)`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            tree: TreeParams::default(),
            bootstrap: true,
            max_features: None,
            seed: 42,
        }
    }
}

pub fn fit_forest(data: &TrainingSet, y: &[f64], params: &ForestParams) -> Result<Ensemble> {
    if params.n_estimators == 0 {
        return Err(Error::Config("n_estimators must be >= 1".into()));
    }
    let n = data.n_rows();
    let p = data.n_features();
    let mtry = params.max_features.unwrap_or((p / 3).max(1)).clamp(1, p.max(1));
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = XorShift64Star::seed_from(params.seed ^ t as u64);
            let weights = params.bootstrap.then(|| {
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[rng.below(n as u64) as usize] += 1.0;
                }
                w
            });
            let sampler = (mtry < p).then_some(FeatureSampler {
                count: mtry,
                rng: &mut rng,
            });
            grow(data, y, &params.tree, weights.as_deref(), sampler)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        kind: EnsembleKind::Forest,
        base_value: 0.0,
        learning_rate: 1.0,
        trees,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    #[serde(flatten)]
    pub tree: TreeParams,
    /// Recorded for reproducibility; fitting draws no random numbers.
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            tree: TreeParams {
                max_depth: Some(6),
                ..TreeParams::default()
            },
            seed: 42,
        }
    }
}

/// Boosted ensemble plus the training mean squared error after each round.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedFit {
    pub model: Ensemble,
    pub train_loss: Vec<f64>,
}

pub fn fit_gbt(data: &TrainingSet, y: &[f64], params: &GbtParams) -> Result<BoostedFit> {
    if params.n_estimators == 0 {
        return Err(Error::Config("n_estimators must be >= 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::Config(format!(
            "learning_rate must be in (0, 1], got {}",
            params.learning_rate
        )));
    }
    let n = data.n_rows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput("boosting needs matching non-empty targets".into()));
    }
    let base = y.iter().sum::<f64>() / n as f64;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
    let mut f = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_loss = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        for i in 0..n {
            residual[i] = y[i] - f[i];
        }
        let tree = grow(data, &residual, &params.tree, None, None)?;
        for i in 0..n {
            f[i] += params.learning_rate * tree.predict(&rows[i]);
        }
        train_loss.push(y.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok(BoostedFit {
        model: Ensemble {
            kind: EnsembleKind::Boosted,
            base_value: base,
            learning_rate: params.learning_rate,
            trees,
        },
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::tree::fit_tree;
    use proptest::prelude::*;

    fn toy(n: usize, seed: u64) -> (TrainingSet, Vec<f64>) {
        let mut rng = XorShift64Star::seed_from(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.next_f64()).collect())
            .collect();
        let y = rows.iter().map(|r| 2.0 * r[0] + (6.0 * r[1]).sin() - r[2] * r[3]).collect();
        (TrainingSet::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_full_tree_matches_fit_tree() {
        let (data, y) = toy(60, 3);
        let params = ForestParams {
            n_estimators: 1,
            bootstrap: false,
            max_features: Some(4),
            ..Default::default()
        };
        let forest = fit_forest(&data, &y, &params).unwrap();
        let tree = fit_tree(&data, &y, &params.tree, None).unwrap();
        assert_eq!(forest.trees[0], tree);
    }

    #[test]
    fn forest_is_deterministic() {
        let (data, y) = toy(80, 5);
        let params = ForestParams {
            n_estimators: 12,
            ..Default::default()
        };
        let a = fit_forest(&data, &y, &params).unwrap();
        let b = fit_forest(&data, &y, &params).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&data, &y, &ForestParams { seed: 43, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn boosting_prediction_formula() {
        let (data, y) = toy(50, 9);
        let fit = fit_gbt(&data, &y, &GbtParams { n_estimators: 20, ..Default::default() }).unwrap();
        let x = data.row(3);
        let manual = fit.model.base_value
            + 0.1 * fit.model.trees.iter().map(|t| t.predict(&x)).sum::<f64>();
        assert_eq!(fit.model.predict(&x), manual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn boosting_loss_never_increases(
            seed in any::<u64>(),
            eta in 0.01f64..1.0,
            depth in 1usize..5,
        ) {
            let (data, y) = toy(40, seed);
            let params = GbtParams {
                n_estimators: 25,
                learning_rate: eta,
                tree: TreeParams { max_depth: Some(depth), ..Default::default() },
                seed,
            };
            let fit = fit_gbt(&data, &y, &params).unwrap();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let mut prev = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
            for &l in &fit.train_loss {
                prop_assert!(l <= prev * (1.0 + 1e-12) + 1e-15);
                prev = l;
            }
        }
    }
}
