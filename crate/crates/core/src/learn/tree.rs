//! CART regression trees with exact greedy split search.
//!
//! Every feature is presorted once per training set; each node owns the same
//! contiguous segment in every sorted index array, and children are carved
//! out by a stable partition. Split search is therefore linear in the node
//! size per feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until the leaf-size constraints stop it.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 || self.min_samples_split < 2 {
            return Err(Error::Config(
                "min_samples_leaf must be >= 1 and min_samples_split >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// One node; leaves have no feature and no children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(rename = "f")]
    pub feature: Option<usize>,
    #[serde(rename = "t")]
    pub threshold: Option<f64>,
    #[serde(rename = "l")]
    pub left: Option<usize>,
    #[serde(rename = "r")]
    pub right: Option<usize>,
    /// Weighted mean of the training targets reaching the node.
    #[serde(rename = "v")]
    pub value: f64,
    /// Training-row weight reaching the node.
    pub cover: f64,
    /// Weighted squared-error reduction of the split (0 for leaves).
    #[serde(default)]
    pub gain: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }

    fn leaf(value: f64, cover: f64) -> Self {
        Self {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            value,
            cover,
            gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            nodes: vec![Node::leaf(value, cover)],
        }
    }

    /// Builds a tree from explicit nodes, checking the structure.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let tree = Self { nodes };
        tree.check_structure()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("tree has no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!("node {i} reached twice")));
            }
            let n = &self.nodes[i];
            match (n.feature, n.threshold, n.left, n.right) {
                (None, _, None, None) => {}
                (Some(_), Some(t), Some(l), Some(r)) if t.is_finite() => {
                    for c in [l, r] {
                        if c >= self.nodes.len() || c == i {
                            return Err(Error::InvalidInput(format!("node {i} has bad child {c}")));
                        }
                        stack.push(c);
                    }
                }
                _ => return Err(Error::InvalidInput(format!("node {i} is malformed"))),
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf reached by `x`; `x[f] <= threshold` goes left.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature, n.threshold, n.left, n.right) {
                (Some(f), Some(t), Some(l), Some(r)) => i = if x[f] <= t { l } else { r },
                _ => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + go(t, l).max(go(t, r)),
                _ => 0,
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Positive covers everywhere, and every internal cover equals the sum of its children.
    pub fn has_covers(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.cover > 0.0
                && n.cover.is_finite()
                && match (n.left, n.right) {
                    (Some(l), Some(r)) => {
                        let sum = self.nodes[l].cover + self.nodes[r].cover;
                        (n.cover - sum).abs() <= 1e-9 * n.cover.max(1.0)
                    }
                    _ => true,
                }
        })
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> f64 {
        fn go(t: &RegressionTree, i: usize) -> f64 {
            let n = &t.nodes[i];
            match (n.left, n.right) {
                (Some(l), Some(r)) => {
                    let (cl, cr) = (t.nodes[l].cover, t.nodes[r].cover);
                    (cl * go(t, l) + cr * go(t, r)) / (cl + cr)
                }
                _ => n.value,
            }
        }
        go(self, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter_map(|n| n.feature).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Column-major training inputs with every column presorted.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    n: usize,
}

impl TrainingSet {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("ragged columns".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite training input".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidInput("too many rows".into()));
        }
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Ok(Self { columns, order, n })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::from_columns((0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        Self::from_columns(m.columns()).expect("feature matrices are finite and rectangular")
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Random feature subset drawn at each split.
pub(crate) struct FeatureSampler<'a> {
    pub count: usize,
    pub rng: &'a mut XorShift64Star,
}

impl FeatureSampler<'_> {
    fn draw(&mut self, p: usize, pool: &mut Vec<usize>) -> Vec<usize> {
        pool.clear();
        pool.extend(0..p);
        let k = self.count.min(p);
        for i in 0..k {
            let j = i + self.rng.below((p - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

pub fn fit_tree(
    data: &TrainingSet,
    y: &[f64],
    params: &TreeParams,
    weights: Option<&[f64]>,
) -> Result<RegressionTree> {
    grow(data, y, params, weights, None)
}

struct Work {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub(crate) fn grow(
    data: &TrainingSet,
    y: &[f64],
    params: &TreeParams,
    weights: Option<&[f64]>,
    mut sampler: Option<FeatureSampler<'_>>,
) -> Result<RegressionTree> {
    params.validate()?;
    if y.len() != data.n {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} rows",
            y.len(),
            data.n
        )));
    }
    if let Some(w) = weights {
        if w.len() != data.n || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("row weights must be finite and non-negative".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite target".into()));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let p = data.n_features();

    // Per-feature sorted rows restricted to positive weight.
    let mut order: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&i| weight(i as usize) > 0.0).collect())
        .collect();
    let m = if p > 0 {
        order[0].len()
    } else {
        (0..data.n).filter(|&i| weight(i) > 0.0).count()
    };
    if m == 0 {
        return Err(Error::InvalidInput("no rows with positive weight".into()));
    }
    if m < params.min_samples_split && params.max_depth != Some(0) {
        log::debug!("fit_tree: {m} rows below min_samples_split; single leaf");
    }
    let all_rows: Vec<u32> = if p > 0 {
        order[0].clone()
    } else {
        (0..data.n as u32).filter(|&i| weight(i as usize) > 0.0).collect()
    };

    let node_stats = |rows: &[u32]| {
        let mut w = 0.0;
        let mut s = 0.0;
        for &i in rows {
            let wi = weight(i as usize);
            w += wi;
            s += wi * y[i as usize];
        }
        let mean = s / w;
        let sse: f64 = rows
            .iter()
            .map(|&i| weight(i as usize) * (y[i as usize] - mean).powi(2))
            .sum();
        (w, s, mean, sse)
    };

    let (w0, _, mean0, _) = node_stats(&all_rows);
    let mut nodes = vec![Node::leaf(mean0, w0)];
    let mut stack = vec![Work {
        node: 0,
        start: 0,
        end: m,
        depth: 0,
    }];
    let mut goes_left = vec![false; data.n];
    let mut scratch: Vec<u32> = Vec::with_capacity(m);
    let mut pool = Vec::with_capacity(p);

    while let Some(work) = stack.pop() {
        let count = work.end - work.start;
        let rows_ref: &[u32] = if p > 0 {
            &order[0][work.start..work.end]
        } else {
            &all_rows[work.start..work.end]
        };
        let (w_total, s_total, _, sse) = node_stats(rows_ref);

        let depth_ok = params.max_depth.is_none_or(|d| work.depth < d);
        if !depth_ok
            || p == 0
            || count < params.min_samples_split
            || count < 2 * params.min_samples_leaf
            || sse <= 0.0
        {
            continue;
        }

        let candidates: Vec<usize> = match sampler.as_mut() {
            Some(s) if s.count < p => s.draw(p, &mut pool),
            _ => (0..p).collect(),
        };

        let parent_score = s_total * s_total / w_total;
        let mut best: Option<Best> = None;
        for &f in &candidates {
            let col = &data.columns[f];
            let seg = &order[f][work.start..work.end];
            let mut wl = 0.0;
            let mut sl = 0.0;
            for k in 0..count - 1 {
                let i = seg[k] as usize;
                let wi = weight(i);
                wl += wi;
                sl += wi * y[i];
                let x_here = col[i];
                let x_next = col[seg[k + 1] as usize];
                if x_here == x_next {
                    continue;
                }
                let n_left = k + 1;
                if n_left < params.min_samples_leaf || count - n_left < params.min_samples_leaf {
                    continue;
                }
                let wr = w_total - wl;
                let sr = s_total - sl;
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let gain = sl * sl / wl + sr * sr / wr - parent_score;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (x_here + x_next);
                    if threshold >= x_next {
                        threshold = x_here;
                    }
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }

        let Some(best) = best else { continue };
        if !(best.gain > 1e-12 * sse) {
            continue;
        }

        // Stable partition of every feature's segment.
        let split_col = &data.columns[best.feature];
        for &i in &order[0][work.start..work.end] {
            goes_left[i as usize] = split_col[i as usize] <= best.threshold;
        }
        let mut n_left = 0;
        for ord in order.iter_mut() {
            let seg = &mut ord[work.start..work.end];
            scratch.clear();
            let mut write = 0;
            for k in 0..seg.len() {
                let i = seg[k];
                if goes_left[i as usize] {
                    seg[write] = i;
                    write += 1;
                } else {
                    scratch.push(i);
                }
            }
            seg[write..].copy_from_slice(&scratch);
            n_left = write;
        }
        let mid = work.start + n_left;
        debug_assert!(n_left > 0 && mid < work.end);

        let (wl, _, mean_l, _) = node_stats(&order[0][work.start..mid]);
        let (wr, _, mean_r, _) = node_stats(&order[0][mid..work.end]);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::leaf(mean_l, wl));
        nodes.push(Node::leaf(mean_r, wr));
        let parent = &mut nodes[work.node];
        parent.feature = Some(best.feature);
        parent.threshold = Some(best.threshold);
        parent.left = Some(left);
        parent.right = Some(right);
        parent.gain = best.gain;
        // Right first so the left subtree is expanded next.
        stack.push(Work {
            node: right,
            start: mid,
            end: work.end,
            depth: work.depth + 1,
        });
        stack.push(Work {
            node: left,
            start: work.start,
            end: mid,
            depth: work.depth + 1,
        });
    }
    Ok(RegressionTree { nodes })
}
