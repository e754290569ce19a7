//! Skip-gram embedding of click types: a linear hidden layer trained against
//! sampled negatives with the mean NCE loss. The input weight rows are the
//! embedding; pairwise Euclidean distances between them are the exported
//! context structure.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::ClickTypeId;
use crate::sessionizer::SessionClickstream;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no training pairs (corpus has no neighboring clicks)")]
    NoPairs,
    #[error("invalid skip-gram config: {0}")]
    BadConfig(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
}

/// Training settings for one skip-gram model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub window: usize,
    pub dim: usize,
    /// Negative classes sampled per batch.
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps per loss-averaging window.
    pub plateau_window: usize,
    /// Consecutive stable windows required to stop early.
    pub plateau_periods: usize,
    /// Relative change below which a window counts as stable.
    pub plateau_tolerance: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            window: 1,
            dim: 4,
            negatives: 8,
            learning_rate: 1.0,
            batch_size: 512,
            max_steps: 300_000,
            plateau_window: 2000,
            plateau_periods: 5,
            plateau_tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl SkipgramConfig {
    fn validate(&self) -> Result<(), EmbedError> {
        if self.window < 1
            || self.dim < 1
            || self.negatives < 1
            || self.batch_size < 1
            || self.max_steps < 1
            || self.plateau_window < 1
            || self.plateau_periods < 1
        {
            return Err(EmbedError::BadConfig(
                "window, dim, and all counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted embedding: hidden-layer weights plus the sampled-softmax output
/// layer and the per-window training losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub config: SkipgramConfig,
    pub vocab_size: usize,
    /// V x dim embedding (hidden layer).
    pub input_weights: Vec<Vec<f64>>,
    /// V x dim output layer.
    pub output_weights: Vec<Vec<f64>>,
    pub output_bias: Vec<f64>,
    /// Average loss of each completed (or trailing partial) window.
    pub training_log: Vec<f64>,
    pub steps_run: usize,
}

/// All (center, context) pairs with 0 < |i - j| <= window inside one session;
/// pairs never cross session boundaries.
pub fn build_pairs(
    sessions: &[SessionClickstream],
    window: usize,
) -> Vec<(ClickTypeId, ClickTypeId)> {
    let mut pairs = Vec::new();
    for session in sessions {
        let types = session.click_types();
        for i in 0..types.len() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(types.len());
            for j in lo..hi {
                if j != i {
                    pairs.push((types[i], types[j]));
                }
            }
        }
    }
    pairs
}

/// Empirical context frequency raised to the 3/4 power, renormalized.
pub fn noise_distribution(pairs: &[(ClickTypeId, ClickTypeId)], vocab_size: usize) -> Vec<f64> {
    let mut counts = vec![0u64; vocab_size];
    for &(_, context) in pairs {
        counts[context.index()] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn sample_from(dist: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u <= acc {
            return i;
        }
    }
    dist.len() - 1
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

/// Dense parameter gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub input: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Mean NCE loss and analytic gradients with the negative classes given
/// explicitly. Each true (center, context) pair is scored positive against
/// every negative class.
pub fn nce_loss_and_grads(
    batch: &[(usize, usize)],
    input_weights: &[Vec<f64>],
    output_weights: &[Vec<f64>],
    output_bias: &[f64],
    negatives: &[usize],
) -> (f64, BatchGradients) {
    let vocab = input_weights.len();
    let dim = input_weights[0].len();
    let mut grads = BatchGradients {
        input: vec![vec![0.0; dim]; vocab],
        output: vec![vec![0.0; dim]; vocab],
        bias: vec![0.0; vocab],
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(center, context) in batch {
        let classes = std::iter::once((context, true))
            .chain(negatives.iter().map(|&n| (n, false)));
        for (klass, positive) in classes {
            let score: f64 = input_weights[center]
                .iter()
                .zip(&output_weights[klass])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + output_bias[klass];
            // -log sigmoid(s) for positives, -log sigmoid(-s) for negatives.
            let (term, g) = if positive {
                (softplus(-score), sigmoid(score) - 1.0)
            } else {
                (softplus(score), sigmoid(score))
            };
            loss += term * scale;
            let g = g * scale;
            for d in 0..dim {
                grads.output[klass][d] += g * input_weights[center][d];
                grads.input[center][d] += g * output_weights[klass][d];
            }
            grads.bias[klass] += g;
        }
    }
    (loss, grads)
}

/// Samples the per-batch negative classes, then computes the mean NCE loss
/// and gradients.
pub fn nce_batch_loss_and_grads(
    batch: &[(usize, usize)],
    input_weights: &[Vec<f64>],
    output_weights: &[Vec<f64>],
    output_bias: &[f64],
    noise: &[f64],
    negatives: usize,
    rng: &mut ChaCha12Rng,
) -> (f64, BatchGradients) {
    let sampled: Vec<usize> = (0..negatives).map(|_| sample_from(noise, rng)).collect();
    nce_loss_and_grads(batch, input_weights, output_weights, output_bias, &sampled)
}

/// SGD over shuffled pair batches with early stopping when the windowed
/// average loss stays within tolerance for the configured number of
/// consecutive windows.
pub fn train_skipgram(
    pairs: &[(ClickTypeId, ClickTypeId)],
    vocab_size: usize,
    config: &SkipgramConfig,
) -> Result<EmbeddingModel, EmbedError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(EmbedError::NoPairs);
    }
    let idx_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(c, o)| (c.index(), o.index()))
        .collect();
    let noise = noise_distribution(pairs, vocab_size);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let bound = 0.5 / config.dim as f64;
    let mut input_weights: Vec<Vec<f64>> = (0..vocab_size)
        .map(|_| (0..config.dim).map(|_| rng.random_range(-bound..bound)).collect())
        .collect();
    let mut output_weights = vec![vec![0.0; config.dim]; vocab_size];
    let mut output_bias = vec![0.0; vocab_size];

    let mut training_log = Vec::new();
    let mut window_sum = 0.0;
    let mut window_steps = 0usize;
    let mut prev_window_avg: Option<f64> = None;
    let mut stable_streak = 0usize;
    let mut steps_run = 0usize;
    let mut shuffled = idx_pairs.clone();

    'training: while steps_run < config.max_steps {
        shuffled.shuffle(&mut rng);
        for batch in shuffled.chunks(config.batch_size) {
            let (loss, grads) = nce_batch_loss_and_grads(
                batch,
                &input_weights,
                &output_weights,
                &output_bias,
                &noise,
                config.negatives,
                &mut rng,
            );
            let lr = config.learning_rate;
            for (row, grow) in input_weights.iter_mut().zip(&grads.input) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * g;
                }
            }
            for (row, grow) in output_weights.iter_mut().zip(&grads.output) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * g;
                }
            }
            for (b, g) in output_bias.iter_mut().zip(&grads.bias) {
                *b -= lr * g;
            }

            steps_run += 1;
            window_sum += loss;
            window_steps += 1;
            if window_steps == config.plateau_window {
                let avg = window_sum / window_steps as f64;
                training_log.push(avg);
                if let Some(prev) = prev_window_avg {
                    let rel = (avg - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                    if rel < config.plateau_tolerance {
                        stable_streak += 1;
                    } else {
                        stable_streak = 0;
                    }
                    if stable_streak >= config.plateau_periods {
                        window_steps = 0;
                        break 'training;
                    }
                }
                prev_window_avg = Some(avg);
                window_sum = 0.0;
                window_steps = 0;
            }
            if steps_run >= config.max_steps {
                break 'training;
            }
        }
    }
    if window_steps > 0 {
        training_log.push(window_sum / window_steps as f64);
    }

    Ok(EmbeddingModel {
        config: config.clone(),
        vocab_size,
        input_weights,
        output_weights,
        output_bias,
        training_log,
        steps_run,
    })
}

impl EmbeddingModel {
    /// Average training loss over the final window.
    pub fn final_loss(&self) -> f64 {
        *self.training_log.last().expect("at least one window logged")
    }
}

/// One grid-search result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub window: usize,
    pub dim: usize,
    pub pair_count: usize,
    pub final_loss: f64,
}

/// Trains one model per (window, dim) grid point and keeps the one with the
/// lowest final-window loss; ties go to the smaller window, then dim.
pub fn grid_select(
    sessions: &[SessionClickstream],
    vocab_size: usize,
    base: &SkipgramConfig,
    grid: &[(usize, usize)],
) -> Result<(EmbeddingModel, Vec<GridEntry>), EmbedError> {
    if grid.is_empty() {
        return Err(EmbedError::EmptyGrid);
    }
    let mut entries = Vec::new();
    let mut best: Option<EmbeddingModel> = None;
    for &(window, dim) in grid {
        let config = SkipgramConfig {
            window,
            dim,
            ..base.clone()
        };
        let pairs = build_pairs(sessions, window);
        let model = train_skipgram(&pairs, vocab_size, &config)?;
        entries.push(GridEntry {
            window,
            dim,
            pair_count: pairs.len(),
            final_loss: model.final_loss(),
        });
        let replace = match &best {
            None => true,
            Some(b) => {
                (model.final_loss(), window, dim)
                    < (b.final_loss(), b.config.window, b.config.dim)
            }
        };
        if replace {
            best = Some(model);
        }
    }
    Ok((best.expect("non-empty grid"), entries))
}

/// Writes the distance matrix as CSV with click-type labels on both axes,
/// ready for heatmap plotting.
pub fn write_distances_csv<W: std::io::Write>(
    writer: W,
    matrix: &[Vec<f64>],
    taxonomy: &crate::course_model::Taxonomy,
) -> Result<(), std::io::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["click_type".to_string()];
    header.extend(taxonomy.types().iter().map(|t| t.label.clone()));
    wtr.write_record(&header)?;
    for (i, row) in matrix.iter().enumerate() {
        let mut record = vec![taxonomy.types()[i].label.clone()];
        record.extend(row.iter().map(|v| format!("{v}")));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// V x V Euclidean distances between embedding rows.
pub fn distance_matrix(model: &EmbeddingModel) -> Vec<Vec<f64>> {
    let v = model.vocab_size;
    let mut out = vec![vec![0.0; v]; v];
    for i in 0..v {
        for j in (i + 1)..v {
            let d: f64 = model.input_weights[i]
                .iter()
                .zip(&model.input_weights[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn session(types: &[u16]) -> SessionClickstream {
        let base = Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap();
        SessionClickstream {
            student: "s".into(),
            week: 0,
            clicks: types
                .iter()
                .enumerate()
                .map(|(i, &ct)| crate::course_model::ClickEvent {
                    timestamp: base + chrono::Duration::seconds(i as i64),
                    student: "s".into(),
                    click_type: ClickTypeId(ct),
                    object: String::new(),
                    seq: i as u64,
                })
                .collect(),
        }
    }

    fn id_pairs(pairs: &[(ClickTypeId, ClickTypeId)]) -> Vec<(u16, u16)> {
        pairs.iter().map(|&(a, b)| (a.0, b.0)).collect()
    }

    #[test]
    fn pairs_window_one_and_two() {
        let s = [session(&[0, 1, 2])];
        let got = id_pairs(&build_pairs(&s, 1));
        assert_eq!(got, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(build_pairs(&s, 2).len(), 6);
    }

    #[test]
    fn pairs_do_not_cross_sessions() {
        let s = [session(&[0, 1]), session(&[2, 3])];
        let got = id_pairs(&build_pairs(&s, 2));
        assert_eq!(got, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
    }

    #[test]
    fn zero_parameters_give_closed_form_loss() {
        let dim = 3;
        let vocab = 6;
        let input = vec![vec![0.0; dim]; vocab];
        let output = vec![vec![0.0; dim]; vocab];
        let bias = vec![0.0; vocab];
        let batch = vec![(0, 1), (2, 3)];
        let negatives = vec![4, 5, 0, 1, 2, 3, 4, 5];
        let (loss, _) = nce_loss_and_grads(&batch, &input, &output, &bias, &negatives);
        let expected = (1.0 + negatives.len() as f64) * 2.0f64.ln();
        assert!((loss - expected).abs() < 1e-12, "loss {loss} vs {expected}");
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let vocab = 6;
        let dim = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let rand_mat = |rng: &mut ChaCha12Rng| -> Vec<Vec<f64>> {
            (0..vocab)
                .map(|_| (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect())
                .collect()
        };
        let input = rand_mat(&mut rng);
        let output = rand_mat(&mut rng);
        let bias: Vec<f64> = (0..vocab).map(|_| rng.random_range(-0.5..0.5)).collect();
        let batch = vec![(0, 1), (2, 3), (4, 5), (1, 0)];
        let negatives = vec![2, 5, 0, 3, 1, 4, 2, 2];

        let (loss, grads) = nce_loss_and_grads(&batch, &input, &output, &bias, &negatives);
        assert!(loss >= 0.0);

        let h = 1e-6;
        let loss_at = |input: &[Vec<f64>], output: &[Vec<f64>], bias: &[f64]| -> f64 {
            nce_loss_and_grads(&batch, input, output, bias, &negatives).0
        };
        let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-4,
                "{what}: analytic {analytic} vs numeric {numeric}"
            );
        };
        for i in 0..vocab {
            for d in 0..dim {
                let mut up = input.clone();
                let mut down = input.clone();
                up[i][d] += h;
                down[i][d] -= h;
                check(
                    grads.input[i][d],
                    loss_at(&up, &output, &bias),
                    loss_at(&down, &output, &bias),
                    &format!("input[{i}][{d}]"),
                );

                let mut up = output.clone();
                let mut down = output.clone();
                up[i][d] += h;
                down[i][d] -= h;
                check(
                    grads.output[i][d],
                    loss_at(&input, &up, &bias),
                    loss_at(&input, &down, &bias),
                    &format!("output[{i}][{d}]"),
                );
            }
            let mut up = bias.clone();
            let mut down = bias.clone();
            up[i] += h;
            down[i] -= h;
            check(
                grads.bias[i],
                loss_at(&input, &output, &up),
                loss_at(&input, &output, &down),
                &format!("bias[{i}]"),
            );
        }
    }

    #[test]
    fn constant_loss_stops_at_exactly_twelve_thousand_steps() {
        // Zero learning rate keeps the output layer at zero, so every score
        // and hence every windowed average is identical.
        let sessions: Vec<_> = (0..40)
            .map(|i| session(&[(i % 4) as u16, ((i + 1) % 4) as u16]))
            .collect();
        let pairs = build_pairs(&sessions, 1);
        let config = SkipgramConfig {
            dim: 3,
            learning_rate: 0.0,
            batch_size: 4,
            max_steps: 100_000,
            seed: 3,
            ..SkipgramConfig::default()
        };
        let model = train_skipgram(&pairs, 4, &config).unwrap();
        assert_eq!(model.steps_run, 12_000);
        assert_eq!(model.training_log.len(), 6);
    }

    #[test]
    fn same_seed_identical_weights() {
        let sessions: Vec<_> = (0..20)
            .map(|i| session(&[(i % 5) as u16, ((i + 2) % 5) as u16, (i % 3) as u16]))
            .collect();
        let pairs = build_pairs(&sessions, 1);
        let config = SkipgramConfig {
            dim: 3,
            batch_size: 16,
            max_steps: 500,
            seed: 9,
            ..SkipgramConfig::default()
        };
        let m1 = train_skipgram(&pairs, 5, &config).unwrap();
        let m2 = train_skipgram(&pairs, 5, &config).unwrap();
        assert_eq!(m1.input_weights, m2.input_weights);
        assert_eq!(m1.output_weights, m2.output_weights);
        assert_eq!(m1.training_log, m2.training_log);
    }

    /// Interchangeable-context corpus: types 0..3 appear together, 4..7
    /// appear together; embeddings should separate the groups.
    #[test]
    fn planted_groups_have_smaller_intra_distances() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut sessions = Vec::new();
        for i in 0..600 {
            let offset = if i % 2 == 0 { 0u16 } else { 4 };
            let types: Vec<u16> = (0..6).map(|_| offset + rng.random_range(0..4)).collect();
            sessions.push(session(&types));
        }
        let pairs = build_pairs(&sessions, 1);
        let config = SkipgramConfig {
            dim: 3,
            learning_rate: 0.5,
            batch_size: 128,
            max_steps: 4000,
            seed: 13,
            ..SkipgramConfig::default()
        };
        let model = train_skipgram(&pairs, 8, &config).unwrap();
        let d = distance_matrix(&model);
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..8 {
                if (i < 4) == (j < 4) {
                    intra.push(d[i][j]);
                } else {
                    inter.push(d[i][j]);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) < mean(&inter),
            "intra {} vs inter {}",
            mean(&intra),
            mean(&inter)
        );
    }

    #[test]
    fn distance_matrix_is_a_metric_and_rotation_invariant() {
        let model = EmbeddingModel {
            config: SkipgramConfig {
                dim: 3,
                ..SkipgramConfig::default()
            },
            vocab_size: 5,
            input_weights: vec![
                vec![0.2, -0.1, 0.4],
                vec![-0.3, 0.5, 0.0],
                vec![0.1, 0.1, 0.1],
                vec![0.9, -0.2, 0.3],
                vec![-0.5, -0.5, 0.2],
            ],
            output_weights: vec![vec![0.0; 3]; 5],
            output_bias: vec![0.0; 5],
            training_log: vec![0.0],
            steps_run: 0,
        };
        let d = distance_matrix(&model);
        for i in 0..5 {
            assert_eq!(d[i][i], 0.0);
            for j in 0..5 {
                assert_eq!(d[i][j], d[j][i]);
                for l in 0..5 {
                    assert!(d[i][j] <= d[i][l] + d[l][j] + 1e-12);
                }
            }
        }

        // Random rotation built by Gram-Schmidt; distances must not move.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut basis: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for i in 0..3 {
            for j in 0..i {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                for d in 0..3 {
                    basis[i][d] -= dot * basis[j][d];
                }
            }
            let norm: f64 = basis[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in basis[i].iter_mut() {
                *v /= norm;
            }
        }
        let mut rotated = model.clone();
        rotated.input_weights = model
            .input_weights
            .iter()
            .map(|row| {
                (0..3)
                    .map(|d| row.iter().zip(basis.iter()).map(|(a, b)| a * b[d]).sum())
                    .collect()
            })
            .collect();
        let dr = distance_matrix(&rotated);
        for i in 0..5 {
            for j in 0..5 {
                assert!((d[i][j] - dr[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_select_returns_argmin() {
        let sessions: Vec<_> = (0..30)
            .map(|i| session(&[(i % 4) as u16, ((i + 1) % 4) as u16, ((i + 3) % 4) as u16]))
            .collect();
        let base = SkipgramConfig {
            batch_size: 32,
            max_steps: 200,
            seed: 5,
            ..SkipgramConfig::default()
        };
        let grid = [(1, 3), (1, 4), (2, 3), (2, 4)];
        let (best, entries) = grid_select(&sessions, 4, &base, &grid).unwrap();
        assert_eq!(entries.len(), 4);
        for e in &entries {
            assert!(best.final_loss() <= e.final_loss);
        }
        // Window-2 models see more pairs.
        assert!(entries[2].pair_count > entries[0].pair_count);

        // Grid of one returns that model; repeated call is deterministic.
        let (only, _) = grid_select(&sessions, 4, &base, &grid[..1]).unwrap();
        assert_eq!(only.config.window, 1);
        assert_eq!(only.config.dim, 3);
        let (best2, _) = grid_select(&sessions, 4, &base, &grid).unwrap();
        assert_eq!(best.input_weights, best2.input_weights);
    }

    #[test]
    fn empty_pairs_error() {
        let config = SkipgramConfig::default();
        assert!(matches!(
            train_skipgram(&[], 4, &config),
            Err(EmbedError::NoPairs)
        ));
    }

    proptest! {
        #[test]
        fn pair_count_matches_brute_force(
            lens in proptest::collection::vec(0usize..8, 1..8),
            window in 1usize..4,
        ) {
            let sessions: Vec<SessionClickstream> = lens
                .iter()
                .map(|&l| session(&(0..l as u16).collect::<Vec<_>>()))
                .collect();
            let pairs = build_pairs(&sessions, window);
            let expected: usize = lens
                .iter()
                .map(|&l| {
                    let mut count = 0;
                    for i in 0..l {
                        for j in 0..l {
                            if i != j && i.abs_diff(j) <= window {
                                count += 1;
                            }
                        }
                    }
                    count
                })
                .sum();
            prop_assert_eq!(pairs.len(), expected);
        }
    }
}
