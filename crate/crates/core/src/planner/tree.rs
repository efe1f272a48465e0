use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 12, min_leaf: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64, samples: usize },
}

/// CART regression tree; node 0 is the root. Descend left iff `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub params: TreeParams,
    pub n_features: usize,
}

/// Split costs closer than this (relative) are ties; the earlier candidate wins.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// True if `cost` beats `best` by more than the tie tolerance.
pub fn improves(cost: f64, best: f64) -> bool {
    cost < best - TIE_TOLERANCE * (1.0 + best.abs())
}

/// Mean of `ys[idx]`, summed in the order given.
pub fn leaf_mean(ys: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub cost: f64,
}

/// Best `(feature, midpoint)` by summed child squared error, scanning features and then
/// thresholds in ascending order; `None` if no split leaves `min_leaf` on each side.
fn best_split(xs: &[Vec<f64>], ys: &[f64], idx: &[usize], n_features: usize, min_leaf: usize) -> Option<BestSplit> {
    let n = idx.len();
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let total_s: f64 = order.iter().map(|&i| ys[i]).sum();
        let total_q: f64 = order.iter().map(|&i| ys[i] * ys[i]).sum();
        let (mut s, mut q) = (0.0, 0.0);
        for k in 0..n - 1 {
            let y = ys[order[k]];
            s += y;
            q += y * y;
            let (lo, hi) = (xs[order[k]][f], xs[order[k + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let sse_l = q - s * s / nl as f64;
            let sse_r = (total_q - q) - (total_s - s) * (total_s - s) / nr as f64;
            let cost = sse_l.max(0.0) + sse_r.max(0.0);
            if best.is_none_or(|b| improves(cost, b.cost)) {
                best = Some(BestSplit { feature: f, threshold: 0.5 * (lo + hi), cost });
            }
        }
    }
    best
}

pub fn fit_tree(xs: &[Vec<f64>], ys: &[f64], params: TreeParams) -> Result<RegressionTree> {
    if xs.is_empty() {
        return Err(Error::arg("cannot fit a tree to an empty training set"));
    }
    if xs.len() != ys.len() {
        return Err(Error::arg("feature and target counts differ"));
    }
    let n_features = xs[0].len();
    if xs.iter().any(|x| x.len() != n_features) {
        return Err(Error::arg("ragged feature rows"));
    }
    if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite training value"));
    }
    if params.min_leaf == 0 {
        return Err(Error::arg("min_leaf must be at least 1"));
    }
    let mut tree = RegressionTree { nodes: Vec::new(), params, n_features };
    grow(&mut tree, xs, ys, (0..xs.len()).collect(), 0);
    Ok(tree)
}

fn grow(tree: &mut RegressionTree, xs: &[Vec<f64>], ys: &[f64], idx: Vec<usize>, depth: usize) -> usize {
    let id = tree.nodes.len();
    let leaf = Node::Leaf { value: leaf_mean(ys, &idx), samples: idx.len() };
    tree.nodes.push(leaf);
    let first = ys[idx[0]];
    let constant = idx.iter().all(|&i| ys[i] == first);
    if depth >= tree.params.max_depth || idx.len() < 2 * tree.params.min_leaf || constant {
        return id;
    }
    let Some(split) = best_split(xs, ys, &idx, tree.n_features, tree.params.min_leaf) else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][split.feature] <= split.threshold);
    let left = grow(tree, xs, ys, l, depth + 1);
    let right = grow(tree, xs, ys, r, depth + 1);
    tree.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
    id
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::arg(format!("tree expects {} features, got {}", self.n_features, x.len())));
        }
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return Ok(value),
                Node::Split { feature, threshold, left, right } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn d(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(t, left).max(d(t, right)),
            }
        }
        d(self, 0)
    }

    /// Structural sanity: every child index is later than its parent and each node is
    /// reached exactly once.
    pub fn check(&self) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return Err(Error::format(format!("tree node {i} is missing or reached twice")));
            }
            seen[i] = true;
            if let Node::Split { feature, left, right, .. } = self.nodes[i] {
                if feature >= self.n_features || left <= i || right <= i {
                    return Err(Error::format(format!("tree node {i} has a bad split")));
                }
                stack.extend([left, right]);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::format("tree has unreachable nodes"));
        }
        Ok(())
    }
}

/// Prediction of a tree, same as [`RegressionTree::predict`].
pub fn predict_tree(tree: &RegressionTree, x: &[f64]) -> Result<f64> {
    tree.predict(x)
}
