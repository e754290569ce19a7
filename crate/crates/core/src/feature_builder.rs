//! Turns sessions into per-student-per-week model features: strategy counts
//! matched against cluster representatives within a Jaro-Winkler threshold,
//! click and session counts, attendance, and outcome labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::{attendance_score, AssessmentWeek, StudentRecord, WeekKind};
use crate::pattern_miner::StrategyCluster;
use crate::prediction::Labels;
use crate::seqdist::{jaro_winkler_distance, Pattern};
use crate::sessionizer::SessionClickstream;

/// Default matching threshold on 1 - jw when comparing session 3-grams
/// against a cluster representative.
pub const MATCH_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("student {student:?} has sessions but no roster record")]
    UnknownStudent { student: String },
    #[error("missing grade for student {student:?} in week {week}")]
    MissingGrade { student: String, week: usize },
    #[error("at least one strategy cluster is required")]
    NoStrategies,
    #[error("the homework-grade task requires attendance features")]
    AttendanceRequired,
}

/// One (student, week) feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub student: String,
    pub week: usize,
    pub week_kind: WeekKind,
    pub strategy_counts: Vec<u64>,
    pub n_clicks: u64,
    pub n_sessions: u64,
    pub lecture_attendance: Option<f64>,
    pub recitation_attendance: Option<f64>,
    pub grade: Option<f64>,
}

/// Per-student-per-week features, one row per roster student and week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub strategy_labels: Vec<String>,
    pub include_attendance: bool,
    pub rows: Vec<FeatureRow>,
}

/// Number of 3-grams of the session within `tau` Jaro-Winkler distance of the
/// representative.
pub fn count_pattern_in_session(
    session: &SessionClickstream,
    representative: &Pattern,
    tau: f64,
) -> u64 {
    assert_eq!(representative.len(), 3, "representatives are 3-grams");
    let types = session.click_types();
    types
        .windows(3)
        .filter(|w| {
            let gram = Pattern(w.to_vec());
            jaro_winkler_distance(&gram, representative).expect("non-empty patterns") <= tau
        })
        .count() as u64
}

/// Builds the matrix: strategy counts summed over a student's sessions per
/// week, plus click/session counts and (optionally) attendance. Weeks with no
/// activity yield zero-count rows rather than being dropped.
pub fn build_features(
    sessions: &[SessionClickstream],
    strategies: &[StrategyCluster],
    roster: &[StudentRecord],
    weeks: &[AssessmentWeek],
    include_attendance: bool,
    tau: f64,
) -> Result<FeatureMatrix, FeatureError> {
    if strategies.is_empty() {
        return Err(FeatureError::NoStrategies);
    }
    let records: BTreeMap<&str, &StudentRecord> =
        roster.iter().map(|r| (r.student.as_str(), r)).collect();
    let mut grouped: BTreeMap<(&str, usize), Vec<&SessionClickstream>> = BTreeMap::new();
    for s in sessions {
        if !records.contains_key(s.student.as_str()) {
            return Err(FeatureError::UnknownStudent {
                student: s.student.clone(),
            });
        }
        grouped.entry((s.student.as_str(), s.week)).or_default().push(s);
    }

    let empty = Vec::new();
    let mut rows = Vec::with_capacity(records.len() * weeks.len());
    for (student, record) in &records {
        for week in weeks {
            let cell = grouped.get(&(student, week.index)).unwrap_or(&empty);
            let strategy_counts: Vec<u64> = strategies
                .iter()
                .map(|strat| {
                    cell.iter()
                        .map(|s| count_pattern_in_session(s, &strat.representative, tau))
                        .sum()
                })
                .collect();
            let (lecture_attendance, recitation_attendance) = if include_attendance {
                (
                    record
                        .lecture_polls
                        .get(&week.index)
                        .and_then(|p| attendance_score(p)),
                    record
                        .recitation_polls
                        .get(&week.index)
                        .and_then(|p| attendance_score(p)),
                )
            } else {
                (None, None)
            };
            rows.push(FeatureRow {
                student: student.to_string(),
                week: week.index,
                week_kind: week.kind,
                strategy_counts,
                n_clicks: cell.iter().map(|s| s.len() as u64).sum(),
                n_sessions: cell.len() as u64,
                lecture_attendance,
                recitation_attendance,
                grade: record.grades.get(&week.index).copied(),
            });
        }
    }
    Ok(FeatureMatrix {
        strategy_labels: strategies.iter().map(|s| s.label.clone()).collect(),
        include_attendance,
        rows,
    })
}

/// Share of rows with at least one nonzero strategy count.
pub fn nonzero_strategy_share(matrix: &FeatureMatrix) -> f64 {
    if matrix.rows.is_empty() {
        return 0.0;
    }
    let hits = matrix
        .rows
        .iter()
        .filter(|r| r.strategy_counts.iter().any(|&c| c > 0))
        .count();
    hits as f64 / matrix.rows.len() as f64
}

/// Supported prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTask {
    /// Classify the week kind (exam = 0, homework = 1) from activity counts.
    AssessmentKind,
    /// Regress the homework grade; exam weeks and weeks without attendance
    /// are dropped.
    HomeworkGrade,
}

/// Design matrix plus labels for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub task: PredictionTask,
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Labels,
    /// (student, week) per retained row.
    pub keys: Vec<(String, usize)>,
}

/// Attaches task labels. The assessment task keeps every row and uses count
/// features only; the grade task keeps homework weeks with full attendance
/// and appends the two attendance features.
pub fn label_rows(
    matrix: &FeatureMatrix,
    task: PredictionTask,
) -> Result<LabeledMatrix, FeatureError> {
    let mut feature_names = matrix.strategy_labels.clone();
    feature_names.push("n_clicks".into());
    feature_names.push("n_sessions".into());

    let count_features = |row: &FeatureRow| -> Vec<f64> {
        row.strategy_counts
            .iter()
            .map(|&c| c as f64)
            .chain([row.n_clicks as f64, row.n_sessions as f64])
            .collect()
    };

    match task {
        PredictionTask::AssessmentKind => {
            let mut x = Vec::with_capacity(matrix.rows.len());
            let mut y = Vec::with_capacity(matrix.rows.len());
            let mut keys = Vec::with_capacity(matrix.rows.len());
            for row in &matrix.rows {
                x.push(count_features(row));
                y.push(match row.week_kind {
                    WeekKind::Exam => 0,
                    WeekKind::Homework => 1,
                });
                keys.push((row.student.clone(), row.week));
            }
            Ok(LabeledMatrix {
                task,
                feature_names,
                x,
                y: Labels::Classes(y),
                keys,
            })
        }
        PredictionTask::HomeworkGrade => {
            if !matrix.include_attendance {
                return Err(FeatureError::AttendanceRequired);
            }
            feature_names.push("lecture_attendance".into());
            feature_names.push("recitation_attendance".into());
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut keys = Vec::new();
            for row in &matrix.rows {
                if row.week_kind != WeekKind::Homework {
                    continue;
                }
                let (Some(lecture), Some(recitation)) =
                    (row.lecture_attendance, row.recitation_attendance)
                else {
                    continue;
                };
                let grade = row.grade.ok_or_else(|| FeatureError::MissingGrade {
                    student: row.student.clone(),
                    week: row.week,
                })?;
                let mut features = count_features(row);
                features.push(lecture);
                features.push(recitation);
                x.push(features);
                y.push(grade);
                keys.push((row.student.clone(), row.week));
            }
            Ok(LabeledMatrix {
                task,
                feature_names,
                x,
                y: Labels::Values(y),
                keys,
            })
        }
    }
}

/// Writes a labeled matrix as CSV: `student,week,label,<features...>`.
/// Assessment labels are the kind strings, grade labels the fraction.
pub fn write_labeled_csv<W: std::io::Write>(
    writer: W,
    labeled: &LabeledMatrix,
) -> Result<(), std::io::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["student".to_string(), "week".into(), "label".into()];
    header.extend(labeled.feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, row) in labeled.x.iter().enumerate() {
        let label = match &labeled.y {
            Labels::Classes(y) => match y[i] {
                0 => "exam".to_string(),
                _ => "homework".to_string(),
            },
            Labels::Values(y) => format!("{}", y[i]),
        };
        let mut record = vec![
            labeled.keys[i].0.clone(),
            labeled.keys[i].1.to_string(),
            label,
        ];
        record.extend(row.iter().map(|v| format!("{v}")));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a labeled matrix written by `write_labeled_csv`.
pub fn read_labeled_csv<R: std::io::Read>(
    reader: R,
    task: PredictionTask,
) -> Result<LabeledMatrix, std::io::Error> {
    let bad = |line: usize, msg: String| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {msg}"))
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.len() < 4 || &headers[0] != "student" || &headers[1] != "week" || &headers[2] != "label"
    {
        return Err(bad(1, "expected student,week,label,<features...> header".into()));
    }
    let feature_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut x = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    let mut keys = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        let week: usize = record[1]
            .parse()
            .map_err(|_| bad(line, format!("bad week {:?}", &record[1])))?;
        keys.push((record[0].to_string(), week));
        match task {
            PredictionTask::AssessmentKind => match &record[2] {
                "exam" => classes.push(0),
                "homework" => classes.push(1),
                other => return Err(bad(line, format!("bad label {other:?}"))),
            },
            PredictionTask::HomeworkGrade => values.push(
                record[2]
                    .parse()
                    .map_err(|_| bad(line, format!("bad grade {:?}", &record[2])))?,
            ),
        }
        let row: Vec<f64> = record
            .iter()
            .skip(3)
            .map(|v| v.parse().map_err(|_| bad(line, format!("bad value {v:?}"))))
            .collect::<Result<_, _>>()?;
        if row.len() != feature_names.len() {
            return Err(bad(line, "wrong number of feature columns".into()));
        }
        x.push(row);
    }
    let y = match task {
        PredictionTask::AssessmentKind => Labels::Classes(classes),
        PredictionTask::HomeworkGrade => Labels::Values(values),
    };
    Ok(LabeledMatrix {
        task,
        feature_names,
        x,
        y,
        keys,
    })
}
