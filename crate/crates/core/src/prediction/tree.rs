//! Single CART tree: recursive best-split construction over a random feature
//! subset per node, with Gini or variance impurity.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{Labels, MaxFeatures};

/// Prediction stored at a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeafValue {
    /// Class probabilities (counts / node size).
    ClassProbs(Vec<f64>),
    /// Mean target value.
    Mean(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: LeafValue,
        /// Fraction of the tree's training samples reaching this node.
        sample_fraction: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        sample_fraction: f64,
        /// i(t) - (n_L/n) i(L) - (n_R/n) i(R) for the accepted split.
        impurity_decrease: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

pub(super) struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub n_classes: usize,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a Labels,
    params: &'a TreeParams,
    n_root: usize,
}

const MIN_DECREASE: f64 = 1e-12;

fn gini_from_counts(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

impl<'a> Builder<'a> {
    fn impurity(&self, rows: &[usize]) -> f64 {
        match self.y {
            Labels::Classes(y) => {
                let mut counts = vec![0usize; self.params.n_classes];
                for &r in rows {
                    counts[y[r]] += 1;
                }
                gini_from_counts(&counts, rows.len())
            }
            Labels::Values(y) => {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
                rows.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>() / n
            }
        }
    }

    fn leaf(&self, rows: &[usize]) -> Node {
        let value = match self.y {
            Labels::Classes(y) => {
                let mut counts = vec![0usize; self.params.n_classes];
                for &r in rows {
                    counts[y[r]] += 1;
                }
                LeafValue::ClassProbs(
                    counts
                        .iter()
                        .map(|&c| c as f64 / rows.len() as f64)
                        .collect(),
                )
            }
            Labels::Values(y) => {
                LeafValue::Mean(rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64)
            }
        };
        Node::Leaf {
            value,
            sample_fraction: rows.len() as f64 / self.n_root as f64,
        }
    }

    /// Best split over one feature; thresholds are midpoints between
    /// consecutive distinct sorted values.
    fn best_split_on(&self, rows: &[usize], feature: usize) -> Option<(f64, f64)> {
        let n = rows.len();
        let msl = self.params.min_samples_leaf;
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));

        let node_impurity = self.impurity(rows);
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |decrease: f64, threshold: f64| {
            if decrease <= MIN_DECREASE {
                return;
            }
            // Strictly-greater keeps the earliest (lowest threshold) on ties.
            if best.map(|(d, _)| decrease > d).unwrap_or(true) {
                best = Some((decrease, threshold));
            }
        };

        match self.y {
            Labels::Classes(y) => {
                let mut left_counts = vec![0usize; self.params.n_classes];
                let mut right_counts = vec![0usize; self.params.n_classes];
                for &r in &order {
                    right_counts[y[r]] += 1;
                }
                for p in 0..n - 1 {
                    let r = order[p];
                    left_counts[y[r]] += 1;
                    right_counts[y[r]] -= 1;
                    let (vl, vr) = (self.x[order[p]][feature], self.x[order[p + 1]][feature]);
                    if vl == vr {
                        continue;
                    }
                    let (nl, nr) = (p + 1, n - p - 1);
                    if nl < msl || nr < msl {
                        continue;
                    }
                    let decrease = node_impurity
                        - (nl as f64 / n as f64) * gini_from_counts(&left_counts, nl)
                        - (nr as f64 / n as f64) * gini_from_counts(&right_counts, nr);
                    consider(decrease, (vl + vr) / 2.0);
                }
            }
            Labels::Values(y) => {
                let total: f64 = order.iter().map(|&r| y[r]).sum();
                let total_sq: f64 = order.iter().map(|&r| y[r] * y[r]).sum();
                let mut left_sum = 0.0;
                let mut left_sq = 0.0;
                for p in 0..n - 1 {
                    let v = y[order[p]];
                    left_sum += v;
                    left_sq += v * v;
                    let (vl, vr) = (self.x[order[p]][feature], self.x[order[p + 1]][feature]);
                    if vl == vr {
                        continue;
                    }
                    let (nl, nr) = ((p + 1) as f64, (n - p - 1) as f64);
                    if (p + 1) < msl || (n - p - 1) < msl {
                        continue;
                    }
                    let var_l = (left_sq / nl - (left_sum / nl).powi(2)).max(0.0);
                    let right_sum = total - left_sum;
                    let right_sq = total_sq - left_sq;
                    let var_r = (right_sq / nr - (right_sum / nr).powi(2)).max(0.0);
                    let decrease =
                        node_impurity - (nl / n as f64) * var_l - (nr / n as f64) * var_r;
                    consider(decrease, (vl + vr) / 2.0);
                }
            }
        }
        best
    }

    fn build(&self, rows: &[usize], depth: usize, rng: &mut ChaCha12Rng) -> Node {
        let n = rows.len();
        let depth_reached = self
            .params
            .max_depth
            .map(|d| depth >= d)
            .unwrap_or(false);
        if depth_reached || n < 2 * self.params.min_samples_leaf.max(1) || self.impurity(rows) <= 1e-15
        {
            return self.leaf(rows);
        }

        let d = self.x[0].len();
        let m = self.params.max_features.resolve(d);
        // Partial Fisher-Yates draw of m distinct features, then ascending
        // order so equal decreases resolve to the lowest feature index.
        let mut indices: Vec<usize> = (0..d).collect();
        for i in 0..m {
            let j = rng.random_range(i..d);
            indices.swap(i, j);
        }
        let mut features = indices[..m].to_vec();
        features.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            if let Some((decrease, threshold)) = self.best_split_on(rows, f) {
                let better = match best {
                    None => true,
                    Some((bd, _, _)) => decrease > bd,
                };
                if better {
                    best = Some((decrease, f, threshold));
                }
            }
        }
        let Some((decrease, feature, threshold)) = best else {
            return self.leaf(rows);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][feature] <= threshold);
        let left = self.build(&left_rows, depth + 1, rng);
        let right = self.build(&right_rows, depth + 1, rng);
        Node::Split {
            feature,
            threshold,
            sample_fraction: n as f64 / self.n_root as f64,
            impurity_decrease: decrease,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

pub(super) fn fit_tree(
    x: &[Vec<f64>],
    y: &Labels,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha12Rng,
) -> Tree {
    let builder = Builder {
        x,
        y,
        params,
        n_root: rows.len(),
    };
    Tree {
        root: builder.build(rows, 0, rng),
    }
}

impl Tree {
    pub fn leaf_for(&self, row: &[f64]) -> &LeafValue {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Accumulates p(t) * impurity decrease per split feature.
    pub fn importance_into(&self, acc: &mut [f64]) {
        fn walk(node: &Node, acc: &mut [f64]) {
            if let Node::Split {
                feature,
                sample_fraction,
                impurity_decrease,
                left,
                right,
                ..
            } = node
            {
                acc[*feature] += sample_fraction * impurity_decrease;
                walk(left, acc);
                walk(right, acc);
            }
        }
        walk(&self.root, acc);
    }
}
