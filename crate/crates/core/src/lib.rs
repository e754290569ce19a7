//! Core library for mining student study strategies from educational-software
//! clickstreams: log ingestion, session splitting, pattern distances and
//! clustering, topic models, click-type embeddings, feature construction,
//! tree-ensemble prediction, and a synthetic-course generator for end-to-end
//! verification.

pub mod click_embedding;
pub mod course_model;
pub mod feature_builder;
pub mod pattern_miner;
pub mod prediction;
pub mod seqdist;
pub mod sessionizer;
pub(crate) mod stats_util;
pub mod synth_course;
pub mod topic_model;
