//! Pipeline orchestration for the `strategy-miner` binary: runs the full
//! ingest → sessionize → mine/topic-model/embed → features → predict
//! workflow from one config file and assembles the consolidated report.

pub mod pipeline;
