//! One-config orchestration of the whole workflow, producing a directory of
//! stage artifacts plus a consolidated `report.json`.
//!
//! Every stage is a pure function of (inputs, config, seeds); reruns with the
//! same config are byte-identical regardless of the thread count.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use strategy_miner_core::click_embedding::{
    distance_matrix, grid_select, write_distances_csv, GridEntry, SkipgramConfig,
};
use strategy_miner_core::course_model::{
    ks_two_sample, parse_event_log, parse_roster, validate_weeks, AssessmentWeek, StudentRecord,
    Taxonomy, WeekKind,
};
use strategy_miner_core::feature_builder::{
    build_features, label_rows, nonzero_strategy_share, write_labeled_csv, LabeledMatrix,
    PredictionTask,
};
use strategy_miner_core::pattern_miner::{export_dendrogram, mine, MinerConfig};
use strategy_miner_core::prediction::{
    fit_forest, grid_search_cv, mdi, mdi_confidence_intervals, normalized_mdi,
    partial_dependence, permutation_test, train_test_split, CvRow, ForestHyper, GridSpec, Labels,
    Metric,
};
use strategy_miner_core::sessionizer::{
    session_summary, sessionize, write_sessions_jsonl, SessionSummary, TimeoutPolicy,
};
use strategy_miner_core::topic_model::{coherence, default_alpha, fit_lda, LdaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

fn verr<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        kind: ErrorKind::Validation,
        message: e.to_string(),
    }
}

fn rerr<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        kind: ErrorKind::Runtime,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub events: PathBuf,
    pub roster: PathBuf,
    pub weeks: PathBuf,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionizerSettings {
    pub short_minutes: f64,
    pub long_minutes: f64,
}

impl Default for SessionizerSettings {
    fn default() -> Self {
        Self {
            short_minutes: 5.0,
            long_minutes: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaSettings {
    pub k: usize,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Types listed per topic in the report.
    pub top_types: usize,
    /// Top types entering the coherence score.
    pub coherence_top: usize,
}

impl Default for LdaSettings {
    fn default() -> Self {
        Self {
            k: 9,
            beta: 0.01,
            iterations: 1000,
            burn_in: 200,
            seed: 0,
            top_types: 5,
            coherence_top: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    /// (window, dim) grid.
    pub grid: Vec<(usize, usize)>,
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub plateau_window: usize,
    pub plateau_periods: usize,
    pub plateau_tolerance: f64,
    pub seed: u64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            grid: vec![(1, 3), (1, 4), (2, 3), (2, 4)],
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

impl EmbeddingSettings {
    pub fn base_config(&self) -> SkipgramConfig {
        SkipgramConfig {
            window: 1,
            dim: 4,
            negatives: self.negatives,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            plateau_window: self.plateau_window,
            plateau_periods: self.plateau_periods,
            plateau_tolerance: self.plateau_tolerance,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionSettings {
    pub grid: GridSpec,
    pub folds: usize,
    pub test_share: f64,
    pub n_permutations: usize,
    /// Jaro-Winkler matching threshold for strategy counting.
    pub match_threshold: f64,
    pub pd_features: usize,
    pub pd_grid_points: usize,
    pub seed: u64,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            folds: 5,
            test_share: 0.2,
            n_permutations: 100,
            match_threshold: 0.2,
            pd_features: 4,
            pd_grid_points: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    #[serde(default)]
    pub sessionizer: SessionizerSettings,
    #[serde(default)]
    pub miner: MinerConfig,
    #[serde(default)]
    pub lda: LdaSettings,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub prediction: PredictionSettings,
}

// ---- report sections ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSection {
    pub dropped_events: usize,
    pub summary: SessionSummary,
    pub nonzero_strategy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareEntry {
    pub click_type_id: u16,
    pub label: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub label: String,
    pub member_count: usize,
    pub representative_ids: Vec<u16>,
    pub representative_labels: Vec<String>,
    pub click_type_shares: Vec<ShareEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub click_type_id: u16,
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub topic: usize,
    pub top_click_types: Vec<WeightEntry>,
    pub coherence: f64,
    pub coherence_skipped_terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSection {
    pub chosen_window: usize,
    pub chosen_dim: usize,
    pub grid: Vec<GridEntry>,
    pub distances_file: String,
    pub click_type_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdiSection {
    pub feature_names: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdEntry {
    pub feature: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSection {
    pub observed_score: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSection {
    pub task: PredictionTask,
    pub metric_name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub majority_baseline: Option<f64>,
    pub degenerate: bool,
    pub best_hyper: ForestHyper,
    pub cv_table: Vec<CvRow>,
    pub train_score: f64,
    pub test_score: f64,
    pub mdi: MdiSection,
    pub partial_dependence: Vec<PdEntry>,
    pub permutation: PermutationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSection {
    pub statistic: f64,
    pub p_value: f64,
    pub n_homework_grades: usize,
    pub n_exam_grades: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub session_summary: SessionSection,
    pub ngram_strategies: Vec<StrategyEntry>,
    pub lda_strategies: Vec<TopicEntry>,
    pub embedding: EmbeddingSection,
    pub assessment_prediction: PredictionSection,
    pub grade_prediction: PredictionSection,
    pub grade_ks_test: KsSection,
}

fn write_json<T: Serialize>(
    out_dir: &Path,
    name: &str,
    value: &T,
    stage: &'static str,
) -> Result<(), PipelineError> {
    let file = File::create(out_dir.join(name)).map_err(rerr(stage))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(rerr(stage))?;
    use std::io::Write;
    writeln!(writer).map_err(rerr(stage))?;
    Ok(())
}

fn write_status(out_dir: &Path, value: serde_json::Value) {
    if let Ok(file) = File::create(out_dir.join("pipeline_status.json")) {
        let _ = serde_json::to_writer_pretty(BufWriter::new(file), &value);
    }
}

/// Classification accuracy or regression MSE (reported positive).
fn plain_score(
    model: &strategy_miner_core::prediction::ForestModel,
    x: &[Vec<f64>],
    y: &Labels,
) -> Result<f64, strategy_miner_core::prediction::PredictError> {
    match y {
        Labels::Classes(truth) => {
            let pred = model.predict_classes(x)?;
            Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
        }
        Labels::Values(truth) => {
            let pred = model.predict_values(x)?;
            Ok(pred
                .iter()
                .zip(truth)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
                / truth.len() as f64)
        }
    }
}

/// Split, tune, fit, and inspect one prediction task.
pub fn run_prediction(
    labeled: &LabeledMatrix,
    settings: &PredictionSettings,
) -> Result<PredictionSection, PipelineError> {
    let stage = "predict";
    let n = labeled.x.len();
    let (train_idx, test_idx) =
        train_test_split(n, settings.test_share, settings.seed).map_err(verr(stage))?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(PipelineError {
            stage,
            kind: ErrorKind::Validation,
            message: format!("split of {n} rows left an empty train or test side"),
        });
    }
    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| labeled.x[i].clone()).collect();
    let train_y = labeled.y.subset(&train_idx);
    let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| labeled.x[i].clone()).collect();
    let test_y = labeled.y.subset(&test_idx);

    let (metric, metric_name) = match labeled.y {
        Labels::Classes(_) => (Metric::Accuracy, "accuracy"),
        Labels::Values(_) => (Metric::NegMse, "mse"),
    };
    let (best_hyper, cv_table) = grid_search_cv(
        &train_x,
        &train_y,
        &settings.grid,
        metric,
        settings.folds,
        settings.seed,
    )
    .map_err(verr(stage))?;
    let model = fit_forest(&train_x, &train_y, &best_hyper, settings.seed).map_err(verr(stage))?;

    let train_score = plain_score(&model, &train_x, &train_y).map_err(rerr(stage))?;
    let test_score = plain_score(&model, &test_x, &test_y).map_err(rerr(stage))?;
    let majority_baseline = match &train_y {
        Labels::Classes(y) => {
            let mut counts = std::collections::BTreeMap::new();
            for &c in y {
                *counts.entry(c).or_insert(0usize) += 1;
            }
            counts
                .values()
                .max()
                .map(|&m| m as f64 / y.len() as f64)
        }
        Labels::Values(_) => None,
    };

    let raw = mdi(&model);
    let normalized = normalized_mdi(&model);
    let intervals = mdi_confidence_intervals(&model, 0.95, 1000, settings.seed);
    let mdi_section = MdiSection {
        feature_names: labeled.feature_names.clone(),
        raw: raw.clone(),
        normalized,
        ci_low: intervals.iter().map(|&(lo, _)| lo).collect(),
        ci_high: intervals.iter().map(|&(_, hi)| hi).collect(),
    };

    let mut ranked: Vec<usize> = (0..raw.len()).collect();
    ranked.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    let mut pd_entries = Vec::new();
    for &f in ranked.iter().take(settings.pd_features) {
        let points = partial_dependence(&model, &train_x, f, settings.pd_grid_points)
            .map_err(rerr(stage))?;
        pd_entries.push(PdEntry {
            feature: labeled.feature_names[f].clone(),
            points,
        });
    }

    let perm = permutation_test(
        &train_x,
        &train_y,
        &best_hyper,
        metric,
        settings.n_permutations,
        settings.seed,
    )
    .map_err(verr(stage))?;
    let observed_score = match metric {
        Metric::Accuracy => perm.observed_score,
        Metric::NegMse => -perm.observed_score,
    };

    Ok(PredictionSection {
        task: labeled.task,
        metric_name: metric_name.into(),
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        majority_baseline,
        degenerate: model.is_degenerate(),
        best_hyper,
        cv_table,
        train_score,
        test_score,
        mdi: mdi_section,
        partial_dependence: pd_entries,
        permutation: PermutationSection {
            observed_score,
            p_value: perm.p_value,
            n_permutations: settings.n_permutations,
        },
    })
}

/// Homework vs exam grade distributions over the roster.
pub fn grade_ks_section(
    roster: &[StudentRecord],
    weeks: &[AssessmentWeek],
) -> Result<KsSection, PipelineError> {
    let mut homework = Vec::new();
    let mut exam = Vec::new();
    for record in roster {
        for (&week, &grade) in &record.grades {
            match weeks.iter().find(|w| w.index == week).map(|w| w.kind) {
                Some(WeekKind::Homework) => homework.push(grade),
                Some(WeekKind::Exam) => exam.push(grade),
                None => {}
            }
        }
    }
    let ks = ks_two_sample(&homework, &exam).map_err(verr("report"))?;
    Ok(KsSection {
        statistic: ks.statistic,
        p_value: ks.p_value,
        n_homework_grades: homework.len(),
        n_exam_grades: exam.len(),
    })
}

fn run_stages(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineReport, PipelineError> {
    fs::create_dir_all(out_dir).map_err(rerr("setup"))?;

    // ingest
    let taxonomy = match &config.inputs.taxonomy {
        Some(path) => {
            let file = File::open(path).map_err(verr("ingest"))?;
            Taxonomy::from_json_reader(BufReader::new(file)).map_err(verr("ingest"))?
        }
        None => Taxonomy::shipped_default(),
    };
    let events_file = File::open(&config.inputs.events).map_err(verr("ingest"))?;
    let events = parse_event_log(BufReader::new(events_file), &taxonomy).map_err(verr("ingest"))?;
    let roster_file = File::open(&config.inputs.roster).map_err(verr("ingest"))?;
    let roster = parse_roster(BufReader::new(roster_file)).map_err(verr("ingest"))?;
    let weeks_file = File::open(&config.inputs.weeks).map_err(verr("ingest"))?;
    let weeks: Vec<AssessmentWeek> =
        serde_json::from_reader(BufReader::new(weeks_file)).map_err(verr("ingest"))?;
    validate_weeks(&weeks).map_err(verr("ingest"))?;

    // sessionize
    let policy = TimeoutPolicy::new(
        config.sessionizer.long_minutes,
        config.sessionizer.short_minutes,
        taxonomy.long_categories(),
    )
    .map_err(verr("sessionize"))?;
    let split = sessionize(&events, &weeks, &policy, taxonomy.load_course())
        .map_err(verr("sessionize"))?;
    let sessions_file = File::create(out_dir.join("sessions.jsonl")).map_err(rerr("sessionize"))?;
    write_sessions_jsonl(BufWriter::new(sessions_file), &split.sessions)
        .map_err(rerr("sessionize"))?;
    let summary = session_summary(&split.sessions);

    // mine
    let mine_out = mine(&split.sessions, &config.miner).map_err(verr("mine"))?;
    write_json(out_dir, "clusters.json", &mine_out.clusters, "mine")?;
    write_json(
        out_dir,
        "dendrogram.json",
        &export_dendrogram(&mine_out.dendrogram),
        "mine",
    )?;
    let ngram_strategies: Vec<StrategyEntry> = mine_out
        .clusters
        .iter()
        .map(|c| {
            let mut shares: Vec<ShareEntry> = c
                .click_type_shares
                .iter()
                .map(|(&id, &share)| ShareEntry {
                    click_type_id: id.0,
                    label: taxonomy.label(id).to_string(),
                    share,
                })
                .collect();
            shares.sort_by(|a, b| {
                b.share
                    .total_cmp(&a.share)
                    .then(a.click_type_id.cmp(&b.click_type_id))
            });
            StrategyEntry {
                label: c.label.clone(),
                member_count: c.members.len(),
                representative_ids: c.representative.tokens().iter().map(|t| t.0).collect(),
                representative_labels: c
                    .representative
                    .tokens()
                    .iter()
                    .map(|&t| taxonomy.label(t).to_string())
                    .collect(),
                click_type_shares: shares,
            }
        })
        .collect();

    // lda
    let lda_config = LdaConfig {
        k: config.lda.k,
        alpha: default_alpha(config.lda.k),
        beta: config.lda.beta,
        iterations: config.lda.iterations,
        burn_in: config.lda.burn_in,
        seed: config.lda.seed,
    };
    let topic_model =
        fit_lda(&split.sessions, taxonomy.vocab_size(), &lda_config).map_err(verr("lda"))?;
    write_json(out_dir, "lda_model.json", &topic_model, "lda")?;
    let mut lda_strategies = Vec::with_capacity(config.lda.k);
    for topic in 0..config.lda.k {
        let top = topic_model
            .top_click_types(topic, config.lda.top_types)
            .map_err(verr("lda"))?;
        let score = coherence(&topic_model, &split.sessions, topic, config.lda.coherence_top)
            .map_err(verr("lda"))?;
        lda_strategies.push(TopicEntry {
            topic,
            top_click_types: top
                .into_iter()
                .map(|(id, weight)| WeightEntry {
                    click_type_id: id.0,
                    label: taxonomy.label(id).to_string(),
                    weight,
                })
                .collect(),
            coherence: score.score,
            coherence_skipped_terms: score.skipped_terms,
        });
    }

    // embed
    let (embedding_model, grid_entries) = grid_select(
        &split.sessions,
        taxonomy.vocab_size(),
        &config.embedding.base_config(),
        &config.embedding.grid,
    )
    .map_err(verr("embed"))?;
    write_json(out_dir, "embedding_model.json", &embedding_model, "embed")?;
    let distances = distance_matrix(&embedding_model);
    let distances_file = File::create(out_dir.join("distances.csv")).map_err(rerr("embed"))?;
    write_distances_csv(BufWriter::new(distances_file), &distances, &taxonomy)
        .map_err(rerr("embed"))?;
    let embedding_section = EmbeddingSection {
        chosen_window: embedding_model.config.window,
        chosen_dim: embedding_model.config.dim,
        grid: grid_entries,
        distances_file: "distances.csv".into(),
        click_type_labels: taxonomy.types().iter().map(|t| t.label.clone()).collect(),
    };

    // features
    let tau = config.prediction.match_threshold;
    let assessment_matrix = build_features(
        &split.sessions,
        &mine_out.clusters,
        &roster,
        &weeks,
        false,
        tau,
    )
    .map_err(verr("features"))?;
    let labeled_assessment =
        label_rows(&assessment_matrix, PredictionTask::AssessmentKind).map_err(verr("features"))?;
    let f = File::create(out_dir.join("features_assessment.csv")).map_err(rerr("features"))?;
    write_labeled_csv(BufWriter::new(f), &labeled_assessment).map_err(rerr("features"))?;

    let grade_matrix = build_features(
        &split.sessions,
        &mine_out.clusters,
        &roster,
        &weeks,
        true,
        tau,
    )
    .map_err(verr("features"))?;
    let labeled_grade =
        label_rows(&grade_matrix, PredictionTask::HomeworkGrade).map_err(verr("features"))?;
    let f = File::create(out_dir.join("features_grade.csv")).map_err(rerr("features"))?;
    write_labeled_csv(BufWriter::new(f), &labeled_grade).map_err(rerr("features"))?;

    // predict
    let assessment_prediction = run_prediction(&labeled_assessment, &config.prediction)?;
    write_json(
        out_dir,
        "prediction_assessment.json",
        &assessment_prediction,
        "predict",
    )?;
    let grade_prediction = run_prediction(&labeled_grade, &config.prediction)?;
    write_json(out_dir, "prediction_grade.json", &grade_prediction, "predict")?;

    // report
    let grade_ks_test = grade_ks_section(&roster, &weeks)?;
    let report = PipelineReport {
        session_summary: SessionSection {
            dropped_events: split.dropped_events,
            summary,
            nonzero_strategy_share: nonzero_strategy_share(&assessment_matrix),
        },
        ngram_strategies,
        lda_strategies,
        embedding: embedding_section,
        assessment_prediction,
        grade_prediction,
        grade_ks_test,
    };
    write_json(out_dir, "report.json", &report, "report")?;
    Ok(report)
}

/// Runs the full pipeline, optionally inside a dedicated thread pool.
/// Writes `pipeline_status.json` marking success or the failing stage.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
    threads: usize,
) -> Result<PipelineReport, PipelineError> {
    let result = if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(rerr("setup"))?;
        pool.install(|| run_stages(config, out_dir))
    } else {
        run_stages(config, out_dir)
    };
    match &result {
        Ok(_) => write_status(out_dir, serde_json::json!({ "status": "complete" })),
        Err(e) => write_status(
            out_dir,
            serde_json::json!({
                "status": "failed",
                "stage": e.stage,
                "error": e.message,
            }),
        ),
    }
    result
}
