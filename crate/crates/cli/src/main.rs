use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use strategy_miner::pipeline::{
    run_pipeline, run_prediction, ErrorKind, PipelineConfig, PipelineError, PredictionSettings,
};
use strategy_miner_core::click_embedding::{
    distance_matrix, grid_select, train_skipgram, write_distances_csv, SkipgramConfig,
};
use strategy_miner_core::course_model::{
    parse_event_log, parse_roster, validate_weeks, write_events_jsonl, write_roster_csv,
    AssessmentWeek, Taxonomy,
};
use strategy_miner_core::feature_builder::{
    build_features, label_rows, read_labeled_csv, write_labeled_csv, PredictionTask,
};
use strategy_miner_core::pattern_miner::{
    export_dendrogram, mine, MinerConfig, StrategyCluster,
};
use strategy_miner_core::prediction::GridSpec;
use strategy_miner_core::seqdist::{
    jaro, jaro_winkler, normalized_levenshtein, Pattern,
};
use strategy_miner_core::sessionizer::{
    load_course_segments, read_sessions_jsonl, session_summary, sessionize, waiting_time_log_kde,
    write_sessions_jsonl, TimeoutPolicy,
};
use strategy_miner_core::synth_course::{generate, SynthConfig};
use strategy_miner_core::topic_model::{default_alpha, fit_lda, LdaConfig, TopicModel};

#[derive(Parser)]
#[command(name = "strategy-miner", version, about = "Mine study strategies from course clickstreams")]
struct Cli {
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw event log (and optionally a roster) and write a
    /// canonical JSONL event log.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split events into session clickstreams (week, Load course, timeout).
    Sessionize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        weeks: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        short_min: f64,
        #[arg(long, default_value_t = 60.0)]
        long_min: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a waiting-time KDE CSV (category, log_minute, density).
        #[arg(long)]
        kde: Option<PathBuf>,
    },
    /// Print Jaro, Jaro-Winkler, and normalized Levenshtein for two
    /// comma-separated token lists (ids or single letters).
    Dist { pattern1: String, pattern2: String },
    /// Extract frequent n-grams, cluster them, and write strategy clusters.
    Mine {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "3,4,5", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.01)]
        share: f64,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dendrogram: Option<PathBuf>,
    },
    /// Fit an LDA topic model over session clickstreams.
    Lda {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 200)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top click types of each topic of a fitted LDA model.
    LdaTopics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Train a skip-gram click-type embedding and export distances.
    Embed {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Search the full window {1,2} x dim {3,4} grid instead.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value_t = 1.0)]
        learning_rate: f64,
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, default_value_t = 300_000)]
        max_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        distances: Option<PathBuf>,
    },
    /// Build per-student-per-week features for a prediction task.
    Features {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        weeks: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune, fit, and inspect a random forest on a features CSV.
    Predict {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0.2)]
        test_share: f64,
        #[arg(long, default_value_t = 100)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic course with planted strategies and grade signal.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_events: PathBuf,
        #[arg(long)]
        out_roster: PathBuf,
        #[arg(long)]
        out_weeks: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Run the full pipeline from one config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    AssessmentKind,
    HomeworkGrade,
}

impl From<TaskArg> for PredictionTask {
    fn from(value: TaskArg) -> Self {
        match value {
            TaskArg::AssessmentKind => PredictionTask::AssessmentKind,
            TaskArg::HomeworkGrade => PredictionTask::HomeworkGrade,
        }
    }
}

fn load_taxonomy(path: &Option<PathBuf>) -> Result<Taxonomy> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(Taxonomy::from_json_reader(BufReader::new(file))?)
        }
        None => Ok(Taxonomy::shipped_default()),
    }
}

fn load_weeks(path: &PathBuf) -> Result<Vec<AssessmentWeek>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let weeks: Vec<AssessmentWeek> = serde_json::from_reader(BufReader::new(file))?;
    validate_weeks(&weeks)?;
    Ok(weeks)
}

fn parse_tokens(raw: &str) -> Result<Pattern> {
    let tokens = raw
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            if let Ok(id) = tok.parse::<u16>() {
                return Ok(id);
            }
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_alphabetic() => {
                    Ok(c.to_ascii_lowercase() as u16 - b'a' as u16)
                }
                _ => bail!("token {tok:?} is neither an id nor a single letter"),
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    Ok(Pattern::from_ids(&tokens))
}

fn write_json_file<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writeln!(writer)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            events,
            taxonomy,
            roster,
            out,
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let file = File::open(&events).with_context(|| format!("opening {}", events.display()))?;
            let parsed = parse_event_log(BufReader::new(file), &taxonomy)?;
            if let Some(roster_path) = roster {
                let file = File::open(&roster_path)
                    .with_context(|| format!("opening {}", roster_path.display()))?;
                let records = parse_roster(BufReader::new(file))?;
                println!("roster ok: {} students", records.len());
            }
            let out_file = File::create(&out)?;
            write_events_jsonl(BufWriter::new(out_file), &parsed, &taxonomy)?;
            let students: std::collections::BTreeSet<&str> =
                parsed.iter().map(|e| e.student.as_str()).collect();
            println!(
                "ingested {} events from {} students -> {}",
                parsed.len(),
                students.len(),
                out.display()
            );
        }
        Command::Sessionize {
            events,
            weeks,
            taxonomy,
            short_min,
            long_min,
            out,
            kde,
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let file = File::open(&events).with_context(|| format!("opening {}", events.display()))?;
            let parsed = parse_event_log(BufReader::new(file), &taxonomy)?;
            let weeks = load_weeks(&weeks)?;
            let policy = TimeoutPolicy::new(long_min, short_min, taxonomy.long_categories())?;
            let split = sessionize(&parsed, &weeks, &policy, taxonomy.load_course())?;
            let out_file = File::create(&out)?;
            write_sessions_jsonl(BufWriter::new(out_file), &split.sessions)?;
            let summary = session_summary(&split.sessions);
            println!(
                "{} sessions (dropped {} events); length mean {:.2} sd {:.2} max {}",
                summary.count,
                split.dropped_events,
                summary.mean_length,
                summary.sd_length,
                summary.max_length
            );

            if let Some(kde_path) = kde {
                let segments = load_course_segments(&parsed, &weeks, taxonomy.load_course());
                let longs = taxonomy.long_categories();
                let shorts: std::collections::BTreeSet<_> = taxonomy
                    .types()
                    .iter()
                    .map(|t| t.id)
                    .filter(|id| !longs.contains(id))
                    .collect();
                let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(&kde_path)?));
                wtr.write_record(["category", "log_minute", "density"])?;
                for (name, filter) in [("content", &longs), ("other", &shorts)] {
                    let kde = match waiting_time_log_kde(&segments, Some(filter)) {
                        Ok(kde) => kde,
                        Err(e) => {
                            eprintln!("warning: skipping {name} KDE: {e}");
                            continue;
                        }
                    };
                    for i in 0..=400 {
                        let x = -6.0 + i as f64 * 0.04;
                        wtr.write_record([
                            name,
                            &format!("{x}"),
                            &format!("{}", kde.evaluate(x)),
                        ])?;
                    }
                }
                wtr.flush()?;
                println!("waiting-time KDE -> {}", kde_path.display());
            }
        }
        Command::Dist { pattern1, pattern2 } => {
            let p1 = parse_tokens(&pattern1)?;
            let p2 = parse_tokens(&pattern2)?;
            let (j, comp) = jaro(&p1, &p2)?;
            let jw = jaro_winkler(&p1, &p2)?;
            let lev = normalized_levenshtein(&p1, &p2)?;
            println!("jaro                    {j:.6}  (m={} t={} l={})", comp.m, comp.t, comp.l);
            println!("jaro_winkler            {jw:.6}");
            println!("jaro_winkler_distance   {:.6}", 1.0 - jw);
            println!("normalized_levenshtein  {lev:.6}");
        }
        Command::Mine {
            sessions,
            n,
            share,
            k,
            labels,
            out,
            dendrogram,
        } => {
            let file = File::open(&sessions)
                .with_context(|| format!("opening {}", sessions.display()))?;
            let sessions = read_sessions_jsonl(BufReader::new(file))?;
            let config = MinerConfig {
                ngram_lengths: n,
                candidate_share: share,
                k,
                labels,
            };
            let output = mine(&sessions, &config)?;
            write_json_file(&out, &output.clusters)?;
            if let Some(dendro_path) = dendrogram {
                write_json_file(&dendro_path, &export_dendrogram(&output.dendrogram))?;
            }
            println!(
                "{} candidates -> {} clusters -> {}",
                output.candidates.len(),
                output.clusters.len(),
                out.display()
            );
        }
        Command::Lda {
            sessions,
            taxonomy,
            k,
            beta,
            iters,
            burn_in,
            seed,
            out,
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let file = File::open(&sessions)
                .with_context(|| format!("opening {}", sessions.display()))?;
            let sessions = read_sessions_jsonl(BufReader::new(file))?;
            let config = LdaConfig {
                k,
                alpha: default_alpha(k),
                beta,
                iterations: iters,
                burn_in,
                seed,
            };
            let model = fit_lda(&sessions, taxonomy.vocab_size(), &config)?;
            write_json_file(&out, &model)?;
            println!(
                "fitted {} topics over {} sessions -> {}",
                k,
                sessions.len(),
                out.display()
            );
        }
        Command::LdaTopics {
            model,
            taxonomy,
            top,
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let file = File::open(&model).with_context(|| format!("opening {}", model.display()))?;
            let model: TopicModel = serde_json::from_reader(BufReader::new(file))?;
            for topic in 0..model.config.k {
                let entries = model.top_click_types(topic, top)?;
                let line: Vec<String> = entries
                    .iter()
                    .map(|(id, w)| format!("{} ({w:.3})", taxonomy.label(*id)))
                    .collect();
                println!("topic {topic}: {}", line.join(", "));
            }
        }
        Command::Embed {
            sessions,
            taxonomy,
            window,
            dim,
            grid,
            learning_rate,
            batch_size,
            max_steps,
            seed,
            out,
            distances,
        } => {
            let taxonomy = load_taxonomy(&taxonomy)?;
            let file = File::open(&sessions)
                .with_context(|| format!("opening {}", sessions.display()))?;
            let sessions = read_sessions_jsonl(BufReader::new(file))?;
            let base = SkipgramConfig {
                window,
                dim,
                learning_rate,
                batch_size,
                max_steps,
                seed,
                ..SkipgramConfig::default()
            };
            let model = if grid {
                let points = [(1, 3), (1, 4), (2, 3), (2, 4)];
                let (model, entries) =
                    grid_select(&sessions, taxonomy.vocab_size(), &base, &points)?;
                for e in &entries {
                    println!(
                        "window {} dim {}: final loss {:.6} ({} pairs)",
                        e.window, e.dim, e.final_loss, e.pair_count
                    );
                }
                model
            } else {
                let pairs = strategy_miner_core::click_embedding::build_pairs(&sessions, window);
                train_skipgram(&pairs, taxonomy.vocab_size(), &base)?
            };
            println!(
                "chose window {} dim {} after {} steps (final loss {:.6})",
                model.config.window,
                model.config.dim,
                model.steps_run,
                model.final_loss()
            );
            write_json_file(&out, &model)?;
            if let Some(dist_path) = distances {
                let matrix = distance_matrix(&model);
                write_distances_csv(
                    BufWriter::new(File::create(&dist_path)?),
                    &matrix,
                    &taxonomy,
                )?;
                println!("distance matrix -> {}", dist_path.display());
            }
        }
        Command::Features {
            sessions,
            clusters,
            roster,
            weeks,
            task,
            tau,
            out,
        } => {
            let file = File::open(&sessions)
                .with_context(|| format!("opening {}", sessions.display()))?;
            let sessions = read_sessions_jsonl(BufReader::new(file))?;
            let file = File::open(&clusters)
                .with_context(|| format!("opening {}", clusters.display()))?;
            let clusters: Vec<StrategyCluster> = serde_json::from_reader(BufReader::new(file))?;
            let file =
                File::open(&roster).with_context(|| format!("opening {}", roster.display()))?;
            let roster = parse_roster(BufReader::new(file))?;
            let weeks = load_weeks(&weeks)?;
            let task: PredictionTask = task.into();
            let include_attendance = task == PredictionTask::HomeworkGrade;
            let matrix =
                build_features(&sessions, &clusters, &roster, &weeks, include_attendance, tau)?;
            let labeled = label_rows(&matrix, task)?;
            write_labeled_csv(BufWriter::new(File::create(&out)?), &labeled)?;
            println!(
                "{} rows x {} features -> {}",
                labeled.x.len(),
                labeled.feature_names.len(),
                out.display()
            );
        }
        Command::Predict {
            features,
            task,
            grid,
            folds,
            test_share,
            permutations,
            seed,
            out,
        } => {
            let file = File::open(&features)
                .with_context(|| format!("opening {}", features.display()))?;
            let labeled = read_labeled_csv(BufReader::new(file), task.into())?;
            let grid_spec: GridSpec = match grid {
                Some(path) => {
                    let file =
                        File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    serde_json::from_reader(BufReader::new(file))?
                }
                None => GridSpec::default(),
            };
            let settings = PredictionSettings {
                grid: grid_spec,
                folds,
                test_share,
                n_permutations: permutations,
                seed,
                ..PredictionSettings::default()
            };
            let section = run_prediction(&labeled, &settings)?;
            if section.degenerate {
                eprintln!("warning: training labels contain a single class");
            }
            println!(
                "{}: train {:.4} test {:.4} (permutation p = {:.4})",
                section.metric_name,
                section.train_score,
                section.test_score,
                section.permutation.p_value
            );
            write_json_file(&out, &section)?;
        }
        Command::Synth {
            config,
            seed,
            out_events,
            out_roster,
            out_weeks,
            out_truth,
        } => {
            let taxonomy = Taxonomy::shipped_default();
            let mut synth_config = match config {
                Some(path) => {
                    let file =
                        File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    serde_json::from_reader(BufReader::new(file))?
                }
                None => SynthConfig::default_course(0),
            };
            if let Some(seed) = seed {
                synth_config.seed = seed;
            }
            let output = generate(&synth_config, &taxonomy)?;
            write_events_jsonl(
                BufWriter::new(File::create(&out_events)?),
                &output.events,
                &taxonomy,
            )?;
            write_roster_csv(
                BufWriter::new(File::create(&out_roster)?),
                &output.roster,
                &output.weeks,
            )?;
            write_json_file(&out_weeks, &output.weeks)?;
            write_json_file(&out_truth, &output.truth)?;
            println!(
                "generated {} events for {} students over {} weeks",
                output.events.len(),
                output.roster.len(),
                output.weeks.len()
            );
        }
        Command::Run { config, out_dir } => {
            let file =
                File::open(&config).with_context(|| format!("opening {}", config.display()))?;
            let config: PipelineConfig = serde_json::from_reader(BufReader::new(file))?;
            // The global pool is already sized from --threads; avoid nesting.
            let report = run_pipeline(&config, &out_dir, 0)?;
            println!(
                "pipeline complete -> {} ({} sessions, {} ngram strategies, {} topics)",
                out_dir.display(),
                report.session_summary.summary.count,
                report.ngram_strategies.len(),
                report.lda_strategies.len()
            );
        }
    }
    Ok(())
}

/// Validation problems exit 2, runtime failures exit 1.
fn classify(err: &anyhow::Error) -> u8 {
    use strategy_miner_core as core;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e.kind {
                ErrorKind::Validation => 2,
                ErrorKind::Runtime => 1,
            };
        }
        if cause.downcast_ref::<core::course_model::ParseError>().is_some()
            || cause.downcast_ref::<core::course_model::TaxonomyError>().is_some()
            || cause.downcast_ref::<core::course_model::WeekError>().is_some()
            || cause.downcast_ref::<core::course_model::StatsError>().is_some()
            || cause.downcast_ref::<core::sessionizer::SessionizeError>().is_some()
            || cause.downcast_ref::<core::seqdist::DistanceError>().is_some()
            || cause.downcast_ref::<core::pattern_miner::MineError>().is_some()
            || cause.downcast_ref::<core::topic_model::LdaError>().is_some()
            || cause.downcast_ref::<core::click_embedding::EmbedError>().is_some()
            || cause.downcast_ref::<core::feature_builder::FeatureError>().is_some()
            || cause.downcast_ref::<core::prediction::PredictError>().is_some()
            || cause.downcast_ref::<core::synth_course::SynthError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::InvalidData {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
