//! Exact TreeSHAP under the cover-weighted (path-dependent) value function.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Ensemble, FittedModel, RegressionTree};
use crate::matrix::FeatureMatrix;

/// Largest feature count `brute_force_shap` will enumerate.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
    pub additivity_residual: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, idx: usize) {
    let l = path.len() - 1;
    let one = path[idx].one;
    let zero = path[idx].zero;
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = tmp - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in idx..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], idx: usize) -> f64 {
    let l = path.len() - 1;
    let one = path[idx].one;
    let zero = path[idx].zero;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let tmp = next / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].weight - tmp * zero * (l - j) as f64;
        }
    } else if zero != 0.0 {
        for j in (0..l).rev() {
            total += path[j].weight / (zero * (l - j) as f64);
        }
    }
    total * (l + 1) as f64
}

fn recurse(
    tree: &RegressionTree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    let (Some(f), Some(t), Some(l), Some(r)) = (n.feature, n.threshold, n.left, n.right) else {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature.expect("non-root path elements carry a feature")] +=
                w * (e.one - e.zero) * n.value;
        }
        return;
    };
    let (hot, cold) = if x[f] <= t { (l, r) } else { (r, l) };
    let mut in_zero = 1.0;
    let mut in_one = 1.0;
    if let Some(k) = path.iter().skip(1).position(|e| e.feature == Some(f)).map(|k| k + 1) {
        in_zero = path[k].zero;
        in_one = path[k].one;
        unwind(&mut path, k);
    }
    let cover = n.cover;
    recurse(
        tree,
        x,
        phi,
        hot,
        path.clone(),
        in_zero * tree.nodes[hot].cover / cover,
        in_one,
        Some(f),
    );
    recurse(
        tree,
        x,
        phi,
        cold,
        path,
        in_zero * tree.nodes[cold].cover / cover,
        0.0,
        Some(f),
    );
}

fn check_ready(tree: &RegressionTree, p: usize) -> Result<()> {
    if !tree.has_covers() {
        return Err(Error::NotShapReady);
    }
    if tree.used_features().last().is_some_and(|&f| f >= p) {
        return Err(Error::InvalidInput(format!(
            "tree splits on a feature beyond the {p} supplied"
        )));
    }
    Ok(())
}

/// Shapley values of one tree at `x`; `x.len()` fixes the feature count.
pub fn tree_shap(tree: &RegressionTree, x: &[f64]) -> Result<Vec<f64>> {
    check_ready(tree, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("SHAP input has missing entries".into()));
    }
    let mut phi = vec![0.0; x.len()];
    recurse(tree, x, &mut phi, 0, Vec::new(), 1.0, 1.0, None);
    Ok(phi)
}

/// `v(S)`: expected output when features in `S` follow `x` and the rest are
/// marginalized by cover-weighted descent.
pub fn conditional_expectation(tree: &RegressionTree, x: &[f64], in_set: &dyn Fn(usize) -> bool) -> f64 {
    fn go(t: &RegressionTree, x: &[f64], s: &dyn Fn(usize) -> bool, i: usize) -> f64 {
        let n = &t.nodes[i];
        match (n.feature, n.threshold, n.left, n.right) {
            (Some(f), Some(th), Some(l), Some(r)) => {
                if s(f) {
                    go(t, x, s, if x[f] <= th { l } else { r })
                } else {
                    (t.nodes[l].cover * go(t, x, s, l) + t.nodes[r].cover * go(t, x, s, r)) / n.cover
                }
            }
            _ => n.value,
        }
    }
    go(tree, x, in_set, 0)
}

/// Shapley values by enumerating every coalition. Exponential; a test oracle.
pub fn brute_force_shap(tree: &RegressionTree, x: &[f64]) -> Result<Vec<f64>> {
    let p = x.len();
    if p > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::InvalidInput(format!(
            "brute-force SHAP limited to {BRUTE_FORCE_MAX_FEATURES} features, got {p}"
        )));
    }
    check_ready(tree, p)?;
    let values: Vec<f64> = (0u32..1 << p)
        .map(|mask| conditional_expectation(tree, x, &|f| mask >> f & 1 == 1))
        .collect();
    let mut fact = vec![1.0f64; p + 1];
    for k in 1..=p {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        for mask in 0u32..1 << p {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[p - s - 1] / fact[p];
            *out += w * (values[(mask | 1 << i) as usize] - values[mask as usize]);
        }
    }
    Ok(phi)
}

/// Explanation of one ensemble prediction.
pub fn ensemble_shap(ens: &Ensemble, x: &[f64]) -> Result<ShapExplanation> {
    if ens.trees.is_empty() {
        return Err(Error::InvalidInput("ensemble has no trees".into()));
    }
    let w = ens.tree_weight();
    let mut phi = vec![0.0; x.len()];
    let mut base = ens.base_value;
    for tree in &ens.trees {
        let tp = tree_shap(tree, x)?;
        for (a, b) in phi.iter_mut().zip(tp) {
            *a += w * b;
        }
        base += w * tree.expected_value();
    }
    let prediction = ens.predict(x);
    let additivity_residual = base + phi.iter().sum::<f64>() - prediction;
    Ok(ShapExplanation {
        id: None,
        phi,
        base_value: base,
        prediction,
        additivity_residual,
    })
}

/// Explains every row of `m` with a tree-based model.
pub fn explain_matrix(model: &FittedModel, m: &FeatureMatrix) -> Result<Vec<ShapExplanation>> {
    let ens = model.ensemble().ok_or_else(|| {
        Error::InvalidInput(format!(
            "SHAP applies to tree-based models; `{}` is linear",
            model.spec.name
        ))
    })?;
    if m.column_names() != model.feature_names.as_slice() {
        return Err(Error::InvalidInput("SHAP matrix columns differ from model columns".into()));
    }
    (0..m.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut e = ensemble_shap(ens, m.row(i))?;
            e.id = Some(m.row_ids()[i].clone());
            Ok(e)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub ranking: Vec<ImportanceEntry>,
}

impl GlobalImportance {
    pub fn top(&self, k: usize) -> Vec<&str> {
        self.ranking.iter().take(k).map(|e| e.feature.as_str()).collect()
    }
}

/// Mean |phi| per feature, descending; ties keep column order.
pub fn global_importance(
    feature_names: &[String],
    explanations: &[ShapExplanation],
) -> Result<GlobalImportance> {
    if explanations.is_empty() {
        return Err(Error::InvalidInput("no explanations to aggregate".into()));
    }
    let p = feature_names.len();
    if explanations.iter().any(|e| e.phi.len() != p) {
        return Err(Error::InvalidInput("explanations disagree on feature count".into()));
    }
    let mut ranking: Vec<ImportanceEntry> = (0..p)
        .map(|j| ImportanceEntry {
            feature: feature_names[j].clone(),
            mean_abs_phi: explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>()
                / explanations.len() as f64,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    Ok(GlobalImportance { ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{fit_forest, fit_gbt, ForestParams, GbtParams, Node, TrainingSet, TreeParams};
    use crate::rng::XorShift64Star;
    use proptest::prelude::*;

    fn stump() -> RegressionTree {
        RegressionTree::from_nodes(vec![
            Node {
                feature: Some(0),
                threshold: Some(0.5),
                left: Some(1),
                right: Some(2),
                value: 0.5,
                cover: 100.0,
                gain: 25.0,
            },
            Node { feature: None, threshold: None, left: None, right: None, value: 0.0, cover: 50.0, gain: 0.0 },
            Node { feature: None, threshold: None, left: None, right: None, value: 1.0, cover: 50.0, gain: 0.0 },
        ])
        .unwrap()
    }

    #[test]
    fn stump_values() {
        let t = stump();
        let x = [0.7, 3.0, -1.0];
        assert_eq!(tree_shap(&t, &x).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(brute_force_shap(&t, &x).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(t.expected_value(), 0.5);
    }

    #[test]
    fn single_leaf_is_zero() {
        let t = RegressionTree::leaf(2.5, 10.0);
        assert_eq!(tree_shap(&t, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(brute_force_shap(&t, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn missing_cover_rejected() {
        let mut t = stump();
        t.nodes[1].cover = 0.0;
        assert!(matches!(tree_shap(&t, &[0.1]), Err(Error::NotShapReady)));
    }

    #[test]
    fn brute_force_guard() {
        let t = RegressionTree::leaf(0.0, 1.0);
        assert!(brute_force_shap(&t, &[0.0; 21]).is_err());
    }

    #[test]
    fn symmetric_features_share_credit() {
        // y = a AND b over a balanced 2x2 design
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = [0.0, 0.0, 0.0, 1.0];
        let data = TrainingSet::from_rows(&rows).unwrap();
        let t = crate::learn::fit_tree(&data, &y, &TreeParams::default(), None).unwrap();
        let phi = tree_shap(&t, &[1.0, 1.0]).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    fn toy(seed: u64, n: usize, p: usize) -> (TrainingSet, Vec<f64>, Vec<Vec<f64>>) {
        let mut rng = XorShift64Star::seed_from(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.next_f64()).collect()).collect();
        let y = rows.iter().map(|r| 3.0 * r[0] + r[1] * r[2] + 0.1 * rng.next_f64()).collect();
        (TrainingSet::from_rows(&rows).unwrap(), y, rows)
    }

    #[test]
    fn forest_duplication_invariance_and_additivity() {
        let (data, y, rows) = toy(4, 80, 5);
        let f = fit_forest(&data, &y, &ForestParams { n_estimators: 6, ..Default::default() }).unwrap();
        let mut doubled = f.clone();
        doubled.trees.extend(f.trees.clone());
        for r in rows.iter().take(10) {
            let a = ensemble_shap(&f, r).unwrap();
            let b = ensemble_shap(&doubled, r).unwrap();
            assert!(a.additivity_residual.abs() <= 1e-8);
            for (u, v) in a.phi.iter().zip(&b.phi) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boosted_additivity_and_dummy() {
        let (data, y, rows) = toy(8, 60, 4);
        let fit = fit_gbt(&data, &y, &GbtParams { n_estimators: 30, ..Default::default() }).unwrap();
        let used: Vec<usize> = {
            let mut u: Vec<usize> = fit.model.trees.iter().flat_map(|t| t.used_features()).collect();
            u.sort_unstable();
            u.dedup();
            u
        };
        for r in &rows {
            let e = ensemble_shap(&fit.model, r).unwrap();
            assert!(e.additivity_residual.abs() <= 1e-8);
            for j in 0..4 {
                if !used.contains(&j) {
                    assert_eq!(e.phi[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn global_ranking_order() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let e = |phi: Vec<f64>| ShapExplanation { id: None, phi, base_value: 0.0, prediction: 0.0, additivity_residual: 0.0 };
        let g = global_importance(&names, &[e(vec![0.1, -0.5, 0.1]), e(vec![0.1, 0.3, -0.1])]).unwrap();
        assert_eq!(g.top(3), vec!["b", "a", "c"]);
        assert!(global_importance(&names, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn matches_brute_force(seed in any::<u64>(), p in 1usize..8, depth in 1usize..5) {
            let (data, y, _) = toy(seed, 50, p.max(3));
            let t = crate::learn::fit_tree(&data, &y, &TreeParams { max_depth: Some(depth), ..Default::default() }, None).unwrap();
            let mut rng = XorShift64Star::seed_from(seed ^ 1);
            for _ in 0..10 {
                let x: Vec<f64> = (0..p.max(3)).map(|_| rng.next_f64()).collect();
                let a = tree_shap(&t, &x).unwrap();
                let b = brute_force_shap(&t, &x).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() <= 1e-9);
                }
                let total = t.expected_value() + a.iter().sum::<f64>();
                prop_assert!((total - t.predict(&x)).abs() <= 1e-9);
            }
        }
    }
}
