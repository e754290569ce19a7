//! Random-forest classifier (Gini) and regressor (variance) with weighted
//! mean-decrease-in-impurity feature importance, partial dependence,
//! grid-search cross-validation, and label-permutation significance tests.

mod evaluate;
mod tree;

pub use evaluate::{
    grid_search_cv, mdi_confidence_intervals, partial_dependence, permutation_test,
    permutation_test_with, train_test_split, CvRow, GridSpec, Metric, PermutationTest,
};
pub use tree::{LeafValue, Node, Tree};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tree::TreeParams;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("need at least 2 training rows, found {found}")]
    TooFewRows { found: usize },
    #[error("{folds} folds exceed {rows} rows")]
    FoldsExceedRows { folds: usize, rows: usize },
    #[error("feature count mismatch: model has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rows ({x_rows}) and labels ({y_len}) differ in length")]
    LabelMismatch { x_rows: usize, y_len: usize },
    #[error("operation does not match the model task")]
    WrongTask,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
}

/// Training targets; the variant selects classification or regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Selects the indexed subset, preserving order.
    pub fn subset(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(idx.iter().map(|&i| v[i]).collect()),
            Labels::Values(v) => Labels::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Third => d / 3,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

/// A fitted tree ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: Task,
    pub hyper: ForestHyper,
    pub seed: u64,
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

/// Fits `n_trees` trees on bootstrap resamples with per-tree seeded RNG
/// streams; the result does not depend on tree-training order.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &Labels,
    hyper: &ForestHyper,
    seed: u64,
) -> Result<ForestModel, PredictError> {
    if x.len() < 2 {
        return Err(PredictError::TooFewRows { found: x.len() });
    }
    if x.len() != y.len() {
        return Err(PredictError::LabelMismatch {
            x_rows: x.len(),
            y_len: y.len(),
        });
    }
    if hyper.n_trees < 1 || hyper.min_samples_leaf < 1 {
        return Err(PredictError::BadHyper(
            "n_trees and min_samples_leaf must be positive".into(),
        ));
    }
    let n_features = x[0].len();
    if let Some(bad) = x.iter().find(|row| row.len() != n_features) {
        return Err(PredictError::DimensionMismatch {
            expected: n_features,
            found: bad.len(),
        });
    }
    let (task, n_classes) = match y {
        Labels::Classes(v) => (Task::Classification, v.iter().max().map(|&m| m + 1).unwrap_or(1)),
        Labels::Values(_) => (Task::Regression, 0),
    };
    let params = TreeParams {
        max_depth: hyper.max_depth,
        max_features: hyper.max_features,
        min_samples_leaf: hyper.min_samples_leaf,
        n_classes,
    };

    let n = x.len();
    let trees: Vec<Tree> = (0..hyper.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let rows: Vec<usize> = if hyper.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            tree::fit_tree(x, y, &rows, &params, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        task,
        hyper: *hyper,
        seed,
        n_features,
        n_classes,
        trees,
    })
}

impl ForestModel {
    fn check_rows(&self, x: &[Vec<f64>]) -> Result<(), PredictError> {
        if let Some(bad) = x.iter().find(|row| row.len() != self.n_features) {
            return Err(PredictError::DimensionMismatch {
                expected: self.n_features,
                found: bad.len(),
            });
        }
        Ok(())
    }

    /// A classifier trained on a single observed class always predicts it.
    pub fn is_degenerate(&self) -> bool {
        self.task == Task::Classification && self.n_classes <= 1
    }

    fn tree_vote(&self, tree: &Tree, row: &[f64]) -> usize {
        match tree.leaf_for(row) {
            LeafValue::ClassProbs(probs) => probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .unwrap_or(0),
            LeafValue::Mean(_) => unreachable!("classification tree holds class probs"),
        }
    }

    /// Vote shares per class.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PredictError> {
        if self.task != Task::Classification {
            return Err(PredictError::WrongTask);
        }
        self.check_rows(x)?;
        Ok(x.iter()
            .map(|row| {
                let mut votes = vec![0usize; self.n_classes];
                for tree in &self.trees {
                    votes[self.tree_vote(tree, row)] += 1;
                }
                votes
                    .iter()
                    .map(|&v| v as f64 / self.trees.len() as f64)
                    .collect()
            })
            .collect())
    }

    /// Majority-vote class labels (ties to the lower class index).
    pub fn predict_classes(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, PredictError> {
        let probs = self.predict_proba(x)?;
        Ok(probs
            .into_iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
                    .map(|(c, _)| c)
                    .unwrap_or(0)
            })
            .collect())
    }

    /// Mean of per-tree leaf means.
    pub fn predict_values(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, PredictError> {
        if self.task != Task::Regression {
            return Err(PredictError::WrongTask);
        }
        self.check_rows(x)?;
        Ok(x.iter()
            .map(|row| {
                let sum: f64 = self
                    .trees
                    .iter()
                    .map(|t| match t.leaf_for(row) {
                        LeafValue::Mean(m) => *m,
                        LeafValue::ClassProbs(_) => unreachable!("regression tree holds means"),
                    })
                    .sum();
                sum / self.trees.len() as f64
            })
            .collect())
    }

    /// Probability of the positive class (index 1 for binary problems) or the
    /// regression value, for partial-dependence style averaging.
    pub(crate) fn positive_score(&self, row: &[f64]) -> f64 {
        match self.task {
            Task::Regression => {
                let sum: f64 = self
                    .trees
                    .iter()
                    .map(|t| match t.leaf_for(row) {
                        LeafValue::Mean(m) => *m,
                        LeafValue::ClassProbs(_) => 0.0,
                    })
                    .sum();
                sum / self.trees.len() as f64
            }
            Task::Classification => {
                let positive = 1.min(self.n_classes.saturating_sub(1));
                let votes = self
                    .trees
                    .iter()
                    .filter(|t| self.tree_vote(t, row) == positive)
                    .count();
                votes as f64 / self.trees.len() as f64
            }
        }
    }

    /// Per-tree importance vectors (p(t) * impurity decrease summed over the
    /// nodes split on each feature).
    pub fn per_tree_importance(&self) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| {
                let mut acc = vec![0.0; self.n_features];
                t.importance_into(&mut acc);
                acc
            })
            .collect()
    }
}

/// Mean decrease in impurity: the per-feature average over trees of
/// p(t) * impurity decrease at nodes split on that feature.
pub fn mdi(model: &ForestModel) -> Vec<f64> {
    let per_tree = model.per_tree_importance();
    let mut out = vec![0.0; model.n_features];
    for tree_imp in &per_tree {
        for (o, v) in out.iter_mut().zip(tree_imp) {
            *o += v;
        }
    }
    for v in out.iter_mut() {
        *v /= model.trees.len() as f64;
    }
    out
}

/// MDI rescaled to sum to 1 (all-zero importance stays zero).
pub fn normalized_mdi(model: &ForestModel) -> Vec<f64> {
    let raw = mdi(model);
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.into_iter().map(|v| v / total).collect()
    } else {
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x_col(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    fn single_tree_hyper() -> ForestHyper {
        ForestHyper {
            n_trees: 1,
            max_depth: Some(1),
            max_features: MaxFeatures::All,
            min_samples_leaf: 1,
            bootstrap: false,
        }
    }

    #[test]
    fn perfect_split_has_hand_computed_mdi() {
        // Balanced binary labels split perfectly by feature 0 at depth 1:
        // Gini 0.5 at the root, 0 in both children, p(root) = 1, so the
        // importance is exactly 0.5.
        let x: Vec<Vec<f64>> = vec![
            vec![0.0, 5.0],
            vec![0.1, 5.0],
            vec![0.9, 5.0],
            vec![1.0, 5.0],
        ];
        let y = Labels::Classes(vec![0, 0, 1, 1]);
        let model = fit_forest(&x, &y, &single_tree_hyper(), 0).unwrap();
        let importance = mdi(&model);
        assert_eq!(importance[0], 0.5);
        assert_eq!(importance[1], 0.0); // constant feature is never used
        match &model.trees[0].root {
            Node::Split {
                feature,
                impurity_decrease,
                sample_fraction,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*impurity_decrease, 0.5);
                assert_eq!(*sample_fraction, 1.0);
            }
            other => panic!("expected a split root, got {other:?}"),
        }
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let x = x_col(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        let y = Labels::Classes(vec![0, 0, 0, 1, 1, 1]);
        let hyper = ForestHyper {
            n_trees: 20,
            ..ForestHyper::default()
        };
        let model = fit_forest(&x, &y, &hyper, 7).unwrap();
        let pred = model.predict_classes(&x).unwrap();
        assert_eq!(pred, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn same_seed_identical_predictions() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, ((i * 3) % 5) as f64])
            .collect();
        let y = Labels::Classes((0..40).map(|i| (i % 2) as usize).collect());
        let hyper = ForestHyper::default();
        let m1 = fit_forest(&x, &y, &hyper, 11).unwrap();
        let m2 = fit_forest(&x, &y, &hyper, 11).unwrap();
        assert_eq!(m1.predict_proba(&x).unwrap(), m2.predict_proba(&x).unwrap());
    }

    #[test]
    fn two_identical_trees_average_to_single_tree_mdi() {
        let x = x_col(&[0.0, 1.0, 2.0, 3.0]);
        let y = Labels::Classes(vec![0, 0, 1, 1]);
        let one = fit_forest(
            &x,
            &y,
            &ForestHyper {
                n_trees: 1,
                bootstrap: false,
                max_features: MaxFeatures::All,
                ..ForestHyper::default()
            },
            0,
        )
        .unwrap();
        let two = fit_forest(
            &x,
            &y,
            &ForestHyper {
                n_trees: 2,
                bootstrap: false,
                max_features: MaxFeatures::All,
                ..ForestHyper::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(mdi(&one), mdi(&two));
    }

    #[test]
    fn single_tree_forest_equals_tree_output() {
        let x = x_col(&[1.0, 2.0, 3.0, 4.0]);
        let y = Labels::Values(vec![1.0, 2.0, 3.0, 4.0]);
        let model = fit_forest(
            &x,
            &y,
            &ForestHyper {
                n_trees: 1,
                bootstrap: false,
                max_features: MaxFeatures::All,
                ..ForestHyper::default()
            },
            0,
        )
        .unwrap();
        let preds = model.predict_values(&x).unwrap();
        for (row, pred) in x.iter().zip(&preds) {
            match model.trees[0].leaf_for(row) {
                LeafValue::Mean(m) => assert_eq!(m, pred),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = x_col(&[0.0, 1.0, 2.0, 3.0]);
        let y = Labels::Classes(vec![0, 0, 1, 1]);
        let model = fit_forest(&x, &y, &ForestHyper::default(), 0).unwrap();
        let bad = vec![vec![0.0, 1.0]];
        assert!(matches!(
            model.predict_classes(&bad),
            Err(PredictError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_single_class_always_predicts_it() {
        let x = x_col(&[0.0, 1.0, 2.0]);
        let y = Labels::Classes(vec![0, 0, 0]);
        let model = fit_forest(&x, &y, &ForestHyper::default(), 0).unwrap();
        assert!(model.is_degenerate());
        assert_eq!(model.predict_classes(&x).unwrap(), vec![0, 0, 0]);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_mdi_identity(
            raw in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0usize..3), 8..40),
        ) {
            let x: Vec<Vec<f64>> = raw.iter().map(|(a, b, _)| vec![*a, *b]).collect();
            let y = Labels::Classes(raw.iter().map(|(_, _, c)| *c).collect());
            let hyper = ForestHyper { n_trees: 10, ..ForestHyper::default() };
            let model = fit_forest(&x, &y, &hyper, 5).unwrap();

            for probs in model.predict_proba(&x).unwrap() {
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }

            // Eq.-1 identity: summing MDI over features equals averaging the
            // total weighted decrease over trees, computed independently.
            let mdi_sum: f64 = mdi(&model).iter().sum();
            fn total_decrease(node: &Node) -> f64 {
                match node {
                    Node::Leaf { .. } => 0.0,
                    Node::Split { sample_fraction, impurity_decrease, left, right, .. } => {
                        sample_fraction * impurity_decrease
                            + total_decrease(left)
                            + total_decrease(right)
                    }
                }
            }
            let direct: f64 = model.trees.iter().map(|t| total_decrease(&t.root)).sum::<f64>()
                / model.trees.len() as f64;
            prop_assert!((mdi_sum - direct).abs() < 1e-12);
        }

        #[test]
        fn regression_stays_within_training_range(
            raw in proptest::collection::vec((0.0f64..10.0, -5.0f64..5.0), 8..40),
        ) {
            let x: Vec<Vec<f64>> = raw.iter().map(|(a, _)| vec![*a]).collect();
            let targets: Vec<f64> = raw.iter().map(|(_, v)| *v).collect();
            let y = Labels::Values(targets.clone());
            let model = fit_forest(&x, &y, &ForestHyper { n_trees: 5, ..ForestHyper::default() }, 2).unwrap();
            let lo = targets.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let probe: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
            for pred in model.predict_values(&probe).unwrap() {
                prop_assert!(pred >= lo - 1e-12 && pred <= hi + 1e-12);
            }
        }
    }
}
