//! Pipeline-level integration: artifact completeness, stage caching,
//! failure reporting, and CLI exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use strategy_miner::pipeline::{
    run_pipeline, ErrorKind, InputPaths, LdaSettings, PipelineConfig, PredictionSettings,
    SessionizerSettings,
};
use strategy_miner_core::course_model::{write_events_jsonl, write_roster_csv, Taxonomy};
use strategy_miner_core::pattern_miner::MinerConfig;
use strategy_miner_core::prediction::{GridSpec, MaxFeatures};
use strategy_miner_core::synth_course::{generate, SynthConfig};

const BIN: &str = env!("CARGO_BIN_EXE_strategy-miner");

/// Writes a small synthetic course into `dir` and returns a fast config.
fn setup_course(dir: &Path, students: usize, seed: u64) -> PipelineConfig {
    let taxonomy = Taxonomy::shipped_default();
    let config = SynthConfig {
        n_students: students,
        ..SynthConfig::default_course(seed)
    };
    let out = generate(&config, &taxonomy).unwrap();
    let events = fs::File::create(dir.join("events.jsonl")).unwrap();
    write_events_jsonl(events, &out.events, &taxonomy).unwrap();
    let roster = fs::File::create(dir.join("roster.csv")).unwrap();
    write_roster_csv(roster, &out.roster, &out.weeks).unwrap();
    fs::write(
        dir.join("weeks.json"),
        serde_json::to_string_pretty(&out.weeks).unwrap(),
    )
    .unwrap();

    PipelineConfig {
        inputs: InputPaths {
            events: dir.join("events.jsonl"),
            roster: dir.join("roster.csv"),
            weeks: dir.join("weeks.json"),
            taxonomy: None,
        },
        sessionizer: SessionizerSettings::default(),
        miner: MinerConfig::default(),
        lda: LdaSettings {
            k: 5,
            iterations: 60,
            burn_in: 20,
            seed: 1,
            ..LdaSettings::default()
        },
        embedding: strategy_miner::pipeline::EmbeddingSettings {
            grid: vec![(1, 3)],
            max_steps: 600,
            seed: 2,
            ..Default::default()
        },
        prediction: PredictionSettings {
            grid: GridSpec {
                max_depth: vec![Some(10)],
                max_features: vec![MaxFeatures::Sqrt],
                min_samples_leaf: vec![1],
                n_trees: vec![30],
            },
            n_permutations: 10,
            seed: 4,
            ..PredictionSettings::default()
        },
    }
}

const ARTIFACTS: &[&str] = &[
    "sessions.jsonl",
    "clusters.json",
    "dendrogram.json",
    "lda_model.json",
    "embedding_model.json",
    "distances.csv",
    "features_assessment.csv",
    "features_grade.csv",
    "prediction_assessment.json",
    "prediction_grade.json",
    "report.json",
    "pipeline_status.json",
];

#[test]
fn full_run_writes_every_artifact_and_section() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_course(dir.path(), 16, 11);
    let out_dir = dir.path().join("out");
    let report = run_pipeline(&config, &out_dir, 0).unwrap();

    for name in ARTIFACTS {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let raw: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    for key in [
        "session_summary",
        "ngram_strategies",
        "lda_strategies",
        "embedding",
        "assessment_prediction",
        "grade_prediction",
        "grade_ks_test",
    ] {
        assert!(raw.get(key).is_some(), "report.json lacks {key}");
    }
    assert!(report.session_summary.summary.count > 0);
    let status: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("pipeline_status.json")).unwrap())
            .unwrap();
    assert_eq!(status["status"], "complete");
}

#[test]
fn corrupt_events_abort_names_ingest_and_flags_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup_course(dir.path(), 8, 3);
    fs::write(dir.path().join("events.jsonl"), "{\"broken\": true}\n").unwrap();
    config.inputs.events = dir.path().join("events.jsonl");
    let out_dir = dir.path().join("out");
    let err = run_pipeline(&config, &out_dir, 0).unwrap_err();
    assert_eq!(err.stage, "ingest");
    assert_eq!(err.kind, ErrorKind::Validation);
    let status: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("pipeline_status.json")).unwrap())
            .unwrap();
    assert_eq!(status["status"], "failed");
    assert_eq!(status["stage"], "ingest");
    assert!(!out_dir.join("report.json").exists());
}

/// Re-running the mine stage from the cached sessions.jsonl must reproduce
/// the pipeline's clusters.json byte for byte.
#[test]
fn single_stage_rerun_from_cached_artifacts_matches() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_course(dir.path(), 12, 5);
    let out_dir = dir.path().join("out");
    run_pipeline(&config, &out_dir, 0).unwrap();

    let reclustered = dir.path().join("reclustered.json");
    let status = Command::new(BIN)
        .args([
            "mine",
            "--sessions",
            out_dir.join("sessions.jsonl").to_str().unwrap(),
            "--out",
            reclustered.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(out_dir.join("clusters.json")).unwrap(),
        fs::read(&reclustered).unwrap(),
    );
}

#[test]
fn cli_exit_codes_distinguish_validation_from_success() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown click type label: validation, exit 2.
    fs::write(
        dir.path().join("bad.csv"),
        "timestamp,student,click_type,object\n2019-03-01T00:00:00Z,s1,No such action,x\n",
    )
    .unwrap();
    let out = Command::new(BIN)
        .args([
            "ingest",
            "--events",
            dir.path().join("bad.csv").to_str().unwrap(),
            "--out",
            dir.path().join("out.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("No such action"), "stderr: {stderr}");

    // Valid input: exit 0.
    fs::write(
        dir.path().join("ok.csv"),
        "timestamp,student,click_type,object\n2019-03-01T00:00:00Z,s1,Load course,x\n",
    )
    .unwrap();
    let status = Command::new(BIN)
        .args([
            "ingest",
            "--events",
            dir.path().join("ok.csv").to_str().unwrap(),
            "--out",
            dir.path().join("out.jsonl").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // Bad CLI usage: clap exits 2.
    let status = Command::new(BIN).args(["mine"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn dist_subcommand_reports_reference_values() {
    let out = Command::new(BIN).args(["dist", "a,b,c", "a,b,d"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("jaro_winkler_distance   0.177778"), "stdout: {stdout}");
}
