//! Model selection and inspection: seeded k-fold grid search, partial
//! dependence over quantile grids, label-permutation significance tests,
//! train/test splitting, and bootstrap intervals for feature importance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_forest, ForestHyper, ForestModel, Labels, MaxFeatures, PredictError};
use crate::stats_util::quantile_sorted;

/// Hyperparameter choices; the cross product is searched in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub max_depth: Vec<Option<usize>>,
    pub max_features: Vec<MaxFeatures>,
    pub min_samples_leaf: Vec<usize>,
    pub n_trees: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            max_depth: vec![Some(3), Some(5), Some(10), None],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Third, MaxFeatures::All],
            min_samples_leaf: vec![1, 5, 10],
            n_trees: vec![100, 300],
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<ForestHyper> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depth {
            for &max_features in &self.max_features {
                for &min_samples_leaf in &self.min_samples_leaf {
                    for &n_trees in &self.n_trees {
                        out.push(ForestHyper {
                            n_trees,
                            max_depth,
                            max_features,
                            min_samples_leaf,
                            bootstrap: true,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Model-quality score; higher is better for both variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    NegMse,
}

fn score_model(
    metric: Metric,
    model: &ForestModel,
    x: &[Vec<f64>],
    y: &Labels,
) -> Result<f64, PredictError> {
    match (metric, y) {
        (Metric::Accuracy, Labels::Classes(truth)) => {
            let pred = model.predict_classes(x)?;
            let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
            Ok(hits as f64 / truth.len() as f64)
        }
        (Metric::NegMse, Labels::Values(truth)) => {
            let pred = model.predict_values(x)?;
            let mse = pred
                .iter()
                .zip(truth)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
                / truth.len() as f64;
            Ok(-mse)
        }
        _ => Err(PredictError::WrongTask),
    }
}

/// One grid point's cross-validation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyper: ForestHyper,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

/// Seeded k-fold grid search; returns the best hyperparameters (ties to the
/// first-listed grid point) and the full CV table.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &Labels,
    grid: &GridSpec,
    metric: Metric,
    folds: usize,
    seed: u64,
) -> Result<(ForestHyper, Vec<CvRow>), PredictError> {
    let n = x.len();
    if folds > n {
        return Err(PredictError::FoldsExceedRows { folds, rows: n });
    }
    if folds < 2 {
        return Err(PredictError::BadHyper("need at least 2 folds".into()));
    }
    if n != y.len() {
        return Err(PredictError::LabelMismatch {
            x_rows: n,
            y_len: y.len(),
        });
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(PredictError::EmptyGrid);
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let bounds: Vec<usize> = (0..=folds).map(|f| f * n / folds).collect();

    let rows: Vec<Result<CvRow, PredictError>> = points
        .par_iter()
        .map(|hyper| {
            let mut fold_scores = Vec::with_capacity(folds);
            for f in 0..folds {
                let test_idx = &indices[bounds[f]..bounds[f + 1]];
                let train_idx: Vec<usize> = indices[..bounds[f]]
                    .iter()
                    .chain(&indices[bounds[f + 1]..])
                    .copied()
                    .collect();
                let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
                let train_y = y.subset(&train_idx);
                let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| x[i].clone()).collect();
                let test_y = y.subset(test_idx);
                let model = fit_forest(&train_x, &train_y, hyper, seed)?;
                fold_scores.push(score_model(metric, &model, &test_x, &test_y)?);
            }
            let mean_score = fold_scores.iter().sum::<f64>() / folds as f64;
            Ok(CvRow {
                hyper: *hyper,
                fold_scores,
                mean_score,
            })
        })
        .collect();
    let rows: Vec<CvRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let best = rows
        .iter()
        .max_by(|a, b| a.mean_score.total_cmp(&b.mean_score))
        .expect("non-empty grid");
    // max_by keeps the last maximum; scan again for the first.
    let best = rows
        .iter()
        .find(|r| r.mean_score == best.mean_score)
        .expect("non-empty grid");
    Ok((best.hyper, rows))
}

/// Mean prediction as one feature sweeps a deduplicated quantile grid
/// (classification averages the positive-class vote share).
pub fn partial_dependence(
    model: &ForestModel,
    x: &[Vec<f64>],
    feature: usize,
    grid_points: usize,
) -> Result<Vec<(f64, f64)>, PredictError> {
    if feature >= model.n_features {
        return Err(PredictError::DimensionMismatch {
            expected: model.n_features,
            found: feature,
        });
    }
    if grid_points < 1 {
        return Err(PredictError::BadHyper("grid_points must be positive".into()));
    }
    let mut column: Vec<f64> = x.iter().map(|row| row[feature]).collect();
    column.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = if grid_points == 1 {
        vec![quantile_sorted(&column, 0.5)]
    } else {
        (0..grid_points)
            .map(|i| quantile_sorted(&column, i as f64 / (grid_points - 1) as f64))
            .collect()
    };
    grid.dedup();

    let mut scratch: Vec<Vec<f64>> = x.to_vec();
    let mut out = Vec::with_capacity(grid.len());
    for &value in &grid {
        for row in scratch.iter_mut() {
            row[feature] = value;
        }
        let mean = scratch
            .iter()
            .map(|row| model.positive_score(row))
            .sum::<f64>()
            / scratch.len() as f64;
        out.push((value, mean));
    }
    Ok(out)
}

/// Observed training score against the label-permutation null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed_score: f64,
    pub permuted_scores: Vec<f64>,
    /// Add-one estimator: (1 + #{permuted >= observed}) / (1 + n_perm).
    pub p_value: f64,
}

/// Permutation test with a caller-supplied score function.
pub fn permutation_test_with<F>(
    x: &[Vec<f64>],
    y: &Labels,
    hyper: &ForestHyper,
    n_perm: usize,
    seed: u64,
    score_fn: F,
) -> Result<PermutationTest, PredictError>
where
    F: Fn(&ForestModel, &[Vec<f64>], &Labels) -> Result<f64, PredictError> + Sync,
{
    if n_perm < 1 {
        return Err(PredictError::BadHyper("n_perm must be at least 1".into()));
    }
    let model = fit_forest(x, y, hyper, seed)?;
    let observed_score = score_fn(&model, x, y)?;

    let permuted: Vec<Result<f64, PredictError>> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(10_000 + i as u64);
            let mut idx: Vec<usize> = (0..y.len()).collect();
            idx.shuffle(&mut rng);
            let y_perm = y.subset(&idx);
            let model = fit_forest(x, &y_perm, hyper, seed)?;
            score_fn(&model, x, &y_perm)
        })
        .collect();
    let permuted_scores: Vec<f64> = permuted.into_iter().collect::<Result<_, _>>()?;

    let better = permuted_scores
        .iter()
        .filter(|&&s| s >= observed_score)
        .count();
    Ok(PermutationTest {
        observed_score,
        permuted_scores,
        p_value: (1 + better) as f64 / (1 + n_perm) as f64,
    })
}

/// Permutation test scored by the given metric on the training set.
pub fn permutation_test(
    x: &[Vec<f64>],
    y: &Labels,
    hyper: &ForestHyper,
    metric: Metric,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationTest, PredictError> {
    permutation_test_with(x, y, hyper, n_perm, seed, |model, x, y| {
        score_model(metric, model, x, y)
    })
}

/// Seeded uniform split into (train, test) index sets; the test side gets
/// floor(n * test_share) rows. Both sides come back sorted.
pub fn train_test_split(
    n_rows: usize,
    test_share: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), PredictError> {
    if !(test_share > 0.0 && test_share < 1.0) {
        return Err(PredictError::BadHyper(format!(
            "test_share must lie in (0, 1), got {test_share}"
        )));
    }
    let mut indices: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_test = (n_rows as f64 * test_share).floor() as usize;
    let mut test: Vec<usize> = indices[..n_test].to_vec();
    let mut train: Vec<usize> = indices[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Percentile bootstrap intervals for raw MDI, resampling trees.
pub fn mdi_confidence_intervals(
    model: &ForestModel,
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let per_tree = model.per_tree_importance();
    let n_trees = per_tree.len();
    let d = model.n_features;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_boot); d];
    for _ in 0..n_boot {
        let mut means = vec![0.0; d];
        for _ in 0..n_trees {
            let t = rand::Rng::random_range(&mut rng, 0..n_trees);
            for (m, v) in means.iter_mut().zip(&per_tree[t]) {
                *m += v;
            }
        }
        for (f, m) in means.into_iter().enumerate() {
            samples[f].push(m / n_trees as f64);
        }
    }
    let lo_level = (1.0 - level) / 2.0;
    samples
        .into_iter()
        .map(|mut s| {
            s.sort_by(f64::total_cmp);
            (
                quantile_sorted(&s, lo_level),
                quantile_sorted(&s, 1.0 - lo_level),
            )
        })
        .collect()
}
