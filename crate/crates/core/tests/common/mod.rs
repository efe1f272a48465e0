//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

pub mod grad;

use std::path::PathBuf;

use rand::Rng;
use sardino::pipeline::{load_idx, Dataset};
use sardino::planner::{LatencyPredictor, Node, RegressionTree, TelemetrySnapshot, TreeParams};

/// Plain recursive tree used by the brute-force CART oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleTree {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<OracleTree>, right: Box<OracleTree> },
}

fn sse(ys: &[f64], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (ys[i] - m) * (ys[i] - m)).sum()
}

/// Exhaustive CART: at every node try each feature and every midpoint between
/// consecutive distinct values, score the partition by directly summed child SSE, and
/// keep the first candidate unless a later one is better by more than the relative
/// tie tolerance.
pub fn cart_oracle(xs: &[Vec<f64>], ys: &[f64], params: TreeParams) -> OracleTree {
    fn build(xs: &[Vec<f64>], ys: &[f64], idx: Vec<usize>, depth: usize, p: TreeParams) -> OracleTree {
        let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
        let constant = idx.iter().all(|&i| ys[i] == ys[idx[0]]);
        if depth >= p.max_depth || idx.len() < 2 * p.min_leaf || constant {
            return OracleTree::Leaf(mean);
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..xs[0].len() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| xs[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][f] <= t);
                if l.len() < p.min_leaf || r.len() < p.min_leaf {
                    continue;
                }
                let cost = sse(ys, &l) + sse(ys, &r);
                let better = match best {
                    None => true,
                    Some((_, _, b)) => cost < b - 1e-9 * (1.0 + b.abs()),
                };
                if better {
                    best = Some((f, t, cost));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return OracleTree::Leaf(mean);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] <= threshold);
        OracleTree::Split {
            feature,
            threshold,
            left: Box::new(build(xs, ys, l, depth + 1, p)),
            right: Box::new(build(xs, ys, r, depth + 1, p)),
        }
    }
    build(xs, ys, (0..xs.len()).collect(), 0, params)
}

pub fn to_oracle(tree: &RegressionTree) -> OracleTree {
    fn conv(t: &RegressionTree, i: usize) -> OracleTree {
        match t.nodes[i] {
            Node::Leaf { value, .. } => OracleTree::Leaf(value),
            Node::Split { feature, threshold, left, right } => OracleTree::Split {
                feature,
                threshold,
                left: Box::new(conv(t, left)),
                right: Box::new(conv(t, right)),
            },
        }
    }
    conv(tree, 0)
}

/// Random regression set: up to 50 rows, 1–5 features, a mix of discrete and
/// continuous columns so duplicate values and tied splits occur.
pub fn random_dataset<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.random_range(1..=50);
    let d = rng.random_range(1..=5);
    let discrete: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|j| if discrete[j] { rng.random_range(0..4) as f64 } else { rng.random_range(-10.0..10.0) })
                .collect()
        })
        .collect();
    let int_y = rng.random_bool(0.3);
    let ys = xs
        .iter()
        .map(|x| {
            if int_y {
                rng.random_range(0..3) as f64
            } else {
                x[0] * 2.0 + if x[d - 1] > 0.0 { 5.0 } else { 0.0 } + rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    (xs, ys)
}

/// Largest feasible `N` by scanning every candidate upward.
pub fn plan_oracle<P: LatencyPredictor>(p: &P, t: &TelemetrySnapshot, deadline: f64, n_min: usize, n_max: usize) -> (usize, bool) {
    let mut found = None;
    for n in n_min..=n_max {
        if p.predict(n, t).unwrap() <= deadline {
            found = Some(n);
        }
    }
    found.map_or((n_min, false), |n| (n, true))
}

/// Table-driven predictor: latency for `N` is `table[N]`, ignoring telemetry.
pub struct TablePredictor(pub Vec<f64>);

impl LatencyPredictor for TablePredictor {
    fn predict(&self, n: usize, _: &TelemetrySnapshot) -> sardino::Result<f64> {
        Ok(self.0[n])
    }
}

pub fn flat_snapshot() -> TelemetrySnapshot {
    TelemetrySnapshot::new(vec![50.0; 10], vec![5000.0; 10]).unwrap()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load_pair(dir: &str, prefix: &str) -> Option<Dataset> {
    let d = data_dir().join(dir);
    load_idx(d.join(format!("{prefix}-images-idx3-ubyte")), d.join(format!("{prefix}-labels-idx1-ubyte"))).ok()
}
