//! Synthetic-course generator: emits an event log, roster, and ground-truth
//! record with planted session strategies, week-kind-dependent activity, and
//! a known grade model, so the whole pipeline can be verified end to end.
//!
//! Timestamps are laid out wide of the sessionizer thresholds (every session
//! opens with `Load course`, internal gaps stay under the short timeout, and
//! sessions sit well apart inside their week), so splitting recovers the
//! intended sessions.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::{
    AssessmentWeek, ClickEvent, ClickTypeId, StudentRecord, Taxonomy, WeekKind,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
}

/// A planted session strategy: a click-type distribution plus usage rates
/// per week kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStrategy {
    pub name: String,
    /// Relative click-type weights; must not include `Load course`.
    pub click_weights: Vec<(ClickTypeId, f64)>,
    pub homework_rate: f64,
    pub exam_rate: f64,
}

impl PlantedStrategy {
    fn rate(&self, kind: WeekKind) -> f64 {
        match kind {
            WeekKind::Homework => self.homework_rate,
            WeekKind::Exam => self.exam_rate,
        }
    }
}

/// Linear grade model over ground-truth activity, with optional
/// homework-specific point masses at 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeModel {
    pub intercept: f64,
    pub per_session: f64,
    pub per_click: f64,
    /// Coefficient on the mean of lecture and recitation attendance.
    pub per_attendance: f64,
    /// Coefficient on the session count of one strategy.
    pub per_engagement: f64,
    pub engagement_strategy: Option<usize>,
    pub noise_sd: f64,
    /// Probability of a skipped homework (grade 0).
    pub hw_zero_prob: f64,
    /// Probability of a perfect homework (grade 1).
    pub hw_full_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_students: usize,
    pub week_kinds: Vec<WeekKind>,
    pub planted_strategies: Vec<PlantedStrategy>,
    /// Poisson session rate per student-week, by week kind.
    pub session_rate_homework: f64,
    pub session_rate_exam: f64,
    /// Mean clicks drawn per session on top of the opening `Load course`.
    pub mean_session_clicks: f64,
    pub grade: GradeModel,
    pub seed: u64,
}

impl SynthConfig {
    /// A 160-student, 7-week course shaped like the motivating setting:
    /// exam weeks see elevated activity and a lecture-review strategy.
    pub fn default_course(seed: u64) -> Self {
        let strategies = vec![
            PlantedStrategy {
                name: "lecture_review".into(),
                click_weights: vec![
                    (ClickTypeId(0), 0.70),
                    (ClickTypeId(1), 0.20),
                    (ClickTypeId(2), 0.10),
                ],
                homework_rate: 0.8,
                exam_rate: 5.0,
            },
            PlantedStrategy {
                name: "homework_engagement".into(),
                click_weights: vec![
                    (ClickTypeId(26), 0.50),
                    (ClickTypeId(5), 0.35),
                    (ClickTypeId(25), 0.15),
                ],
                homework_rate: 3.5,
                exam_rate: 0.6,
            },
            PlantedStrategy {
                name: "catch_up_news".into(),
                click_weights: vec![
                    (ClickTypeId(25), 0.50),
                    (ClickTypeId(24), 0.25),
                    (ClickTypeId(26), 0.15),
                    (ClickTypeId(23), 0.10),
                ],
                homework_rate: 1.5,
                exam_rate: 1.5,
            },
            PlantedStrategy {
                name: "practice_exam_run".into(),
                click_weights: vec![(ClickTypeId(17), 0.60), (ClickTypeId(16), 0.40)],
                homework_rate: 0.2,
                exam_rate: 2.5,
            },
            PlantedStrategy {
                name: "library_reference".into(),
                click_weights: vec![
                    (ClickTypeId(12), 0.70),
                    (ClickTypeId(15), 0.20),
                    (ClickTypeId(13), 0.10),
                ],
                homework_rate: 0.9,
                exam_rate: 0.7,
            },
        ];
        Self {
            n_students: 160,
            week_kinds: vec![
                WeekKind::Homework,
                WeekKind::Homework,
                WeekKind::Homework,
                WeekKind::Exam,
                WeekKind::Homework,
                WeekKind::Homework,
                WeekKind::Exam,
            ],
            planted_strategies: strategies,
            session_rate_homework: 4.0,
            session_rate_exam: 7.5,
            mean_session_clicks: 3.0,
            grade: GradeModel {
                intercept: 0.30,
                per_session: 0.020,
                per_click: 0.003,
                per_attendance: 0.20,
                per_engagement: 0.012,
                engagement_strategy: Some(1),
                noise_sd: 0.05,
                hw_zero_prob: 0.06,
                hw_full_prob: 0.12,
            },
            seed,
        }
    }

    fn validate(&self, taxonomy: &Taxonomy) -> Result<(), SynthError> {
        if self.n_students == 0 || self.week_kinds.is_empty() {
            return Err(SynthError::BadConfig(
                "need at least one student and one week".into(),
            ));
        }
        if self.planted_strategies.is_empty() {
            return Err(SynthError::BadConfig("need at least one strategy".into()));
        }
        for s in &self.planted_strategies {
            if s.click_weights.is_empty()
                || s.click_weights.iter().any(|&(_, w)| !w.is_finite() || w <= 0.0)
                || s.homework_rate < 0.0
                || s.exam_rate < 0.0
            {
                return Err(SynthError::BadConfig(format!(
                    "strategy {:?} has invalid weights or rates",
                    s.name
                )));
            }
            for &(id, _) in &s.click_weights {
                if id.index() >= taxonomy.vocab_size() {
                    return Err(SynthError::BadConfig(format!(
                        "strategy {:?} references unknown click type {id}",
                        s.name
                    )));
                }
                if id == taxonomy.load_course() {
                    return Err(SynthError::BadConfig(format!(
                        "strategy {:?} must not emit Load course clicks",
                        s.name
                    )));
                }
            }
        }
        if self.session_rate_homework < 0.0 || self.session_rate_exam < 0.0 {
            return Err(SynthError::BadConfig("session rates must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&(self.grade.hw_zero_prob + self.grade.hw_full_prob)) {
            return Err(SynthError::BadConfig(
                "homework point-mass probabilities must sum within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Intended activity of one (student, week), sufficient to verify every
/// downstream stage without re-deriving hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentWeekTruth {
    pub student: String,
    pub week: usize,
    pub week_kind: WeekKind,
    pub n_sessions: u64,
    pub n_clicks: u64,
    /// Sessions per planted strategy, by strategy index.
    pub strategy_sessions: Vec<u64>,
    /// (first click timestamp, click count) per intended session.
    pub sessions: Vec<(DateTime<Utc>, usize)>,
    pub lecture_attendance: Option<f64>,
    pub recitation_attendance: Option<f64>,
    pub grade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub strategy_names: Vec<String>,
    pub grade_model: GradeModel,
    pub rows: Vec<StudentWeekTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub events: Vec<ClickEvent>,
    pub roster: Vec<StudentRecord>,
    pub weeks: Vec<AssessmentWeek>,
    pub truth: GroundTruth,
}

fn course_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            return i;
        }
    }
    weights.len() - 1
}

fn poisson(rate: f64, rng: &mut ChaCha12Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

const MAX_SESSIONS_PER_WEEK: u64 = 45;
const MAX_SESSION_CLICKS: usize = 50;

/// Generates the course. Students are driven by independent seeded RNG
/// streams, so the output is byte-stable for a given config.
pub fn generate(config: &SynthConfig, taxonomy: &Taxonomy) -> Result<SynthOutput, SynthError> {
    config.validate(taxonomy)?;
    let weeks: Vec<AssessmentWeek> = config
        .week_kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| AssessmentWeek {
            index: i,
            kind,
            start: course_start() + Duration::days(7 * i as i64),
            deadline: course_start() + Duration::days(7 * (i + 1) as i64),
        })
        .collect();
    let final_week = weeks.len() - 1;
    let noise = Normal::new(0.0, config.grade.noise_sd.max(f64::MIN_POSITIVE)).unwrap();

    let mut events = Vec::new();
    let mut roster = Vec::new();
    let mut truth_rows = Vec::new();

    for student_idx in 0..config.n_students {
        let student = format!("s{student_idx:03}");
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + student_idx as u64);
        let ability: f64 = rng.random();

        let mut record = StudentRecord {
            student: student.clone(),
            grades: Default::default(),
            lecture_polls: Default::default(),
            recitation_polls: Default::default(),
        };

        for week in &weeks {
            let base_rate = match week.kind {
                WeekKind::Homework => config.session_rate_homework,
                WeekKind::Exam => config.session_rate_exam,
            };
            let n_sessions =
                poisson(base_rate * (0.6 + 0.8 * ability), &mut rng).min(MAX_SESSIONS_PER_WEEK);

            let strategy_rates: Vec<f64> = config
                .planted_strategies
                .iter()
                .map(|s| s.rate(week.kind))
                .collect();
            let uniform = strategy_rates.iter().all(|&r| r == 0.0);

            let mut strategy_sessions = vec![0u64; config.planted_strategies.len()];
            let mut sessions_truth = Vec::with_capacity(n_sessions as usize);
            let mut n_clicks = 0u64;
            for s_idx in 0..n_sessions {
                let strategy = if uniform {
                    (s_idx as usize) % config.planted_strategies.len()
                } else {
                    sample_weighted(&strategy_rates, &mut rng)
                };
                strategy_sessions[strategy] += 1;

                let extra =
                    poisson(config.mean_session_clicks, &mut rng).min(MAX_SESSION_CLICKS as u64);
                let length = 1 + extra as usize;
                let start = week.start
                    + Duration::hours(1)
                    + Duration::hours(3 * s_idx as i64)
                    + Duration::seconds(rng.random_range(0..1200));
                let mut at = start;
                for pos in 0..length {
                    let click_type = if pos == 0 {
                        taxonomy.load_course()
                    } else {
                        let weights: Vec<f64> = config.planted_strategies[strategy]
                            .click_weights
                            .iter()
                            .map(|&(_, w)| w)
                            .collect();
                        let pick = sample_weighted(&weights, &mut rng);
                        config.planted_strategies[strategy].click_weights[pick].0
                    };
                    events.push(ClickEvent {
                        timestamp: at,
                        student: student.clone(),
                        click_type,
                        object: "-".into(),
                        seq: 0,
                    });
                    at += Duration::seconds(rng.random_range(10..40));
                }
                sessions_truth.push((start, length));
                n_clicks += length as u64;
            }

            // Attendance polls; finals week has no contact class time.
            let has_polls = !(week.kind == WeekKind::Exam && week.index == final_week);
            let present_prob = (0.35 + 0.6 * ability).min(0.95);
            let lecture: Vec<bool> = if has_polls {
                (0..3).map(|_| rng.random::<f64>() < present_prob).collect()
            } else {
                Vec::new()
            };
            let recitation: Vec<bool> = if has_polls {
                (0..2).map(|_| rng.random::<f64>() < present_prob).collect()
            } else {
                Vec::new()
            };
            let lecture_attendance = crate::course_model::attendance_score(&lecture);
            let recitation_attendance = crate::course_model::attendance_score(&recitation);

            let attendance_mean = match (lecture_attendance, recitation_attendance) {
                (Some(a), Some(b)) => (a + b) / 2.0,
                _ => 0.0,
            };
            let engagement = config
                .grade
                .engagement_strategy
                .map(|i| strategy_sessions[i])
                .unwrap_or(0) as f64;
            let linear = config.grade.intercept
                + config.grade.per_session * n_sessions as f64
                + config.grade.per_click * n_clicks as f64
                + config.grade.per_attendance * attendance_mean
                + config.grade.per_engagement * engagement;
            let u: f64 = rng.random();
            let eps = noise.sample(&mut rng) * if config.grade.noise_sd > 0.0 { 1.0 } else { 0.0 };
            let grade = match week.kind {
                WeekKind::Homework if u < config.grade.hw_zero_prob => 0.0,
                WeekKind::Homework if u < config.grade.hw_zero_prob + config.grade.hw_full_prob => {
                    1.0
                }
                _ => clamp01(linear + eps),
            };

            record.grades.insert(week.index, grade);
            record.lecture_polls.insert(week.index, lecture);
            record.recitation_polls.insert(week.index, recitation);
            truth_rows.push(StudentWeekTruth {
                student: student.clone(),
                week: week.index,
                week_kind: week.kind,
                n_sessions,
                n_clicks,
                strategy_sessions,
                sessions: sessions_truth,
                lecture_attendance,
                recitation_attendance,
                grade,
            });
        }
        roster.push(record);
    }

    events.sort_by_key(|e| e.timestamp);
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64;
    }

    Ok(SynthOutput {
        events,
        roster,
        weeks,
        truth: GroundTruth {
            strategy_names: config
                .planted_strategies
                .iter()
                .map(|s| s.name.clone())
                .collect(),
            grade_model: config.grade.clone(),
            rows: truth_rows,
        },
    })
}
