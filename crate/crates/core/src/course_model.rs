//! Domain vocabulary for a course: click types, click events, assessment
//! weeks, grades, and attendance, plus ingestion of raw logs and rosters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense identifier of an aggregated click type (0..V-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClickTypeId(pub u16);

impl ClickTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClickTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Sub-part of the course a click type refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourseArea {
    LectureNotes,
    Homework,
    Recitation,
    LibraryDoc,
    PracticeExam,
    General,
    None,
}

/// Broad activity class of a click type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickKind {
    Navigation,
    Discussion,
    Behavior,
}

/// One aggregated click type in the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickType {
    pub id: ClickTypeId,
    pub label: String,
    pub area: CourseArea,
    pub kind: ClickKind,
}

pub const LOAD_COURSE_LABEL: &str = "Load course";

const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/default_taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy is empty")]
    Empty,
    #[error("click type ids are not dense and unique (expected 0..{expected}, found problem at id {found})")]
    NonDenseIds { expected: usize, found: u16 },
    #[error("duplicate click type label {0:?}")]
    DuplicateLabel(String),
    #[error("taxonomy must contain exactly one {LOAD_COURSE_LABEL:?} click type, found {0}")]
    LoadCourseCount(usize),
    #[error("invalid taxonomy JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Validated set of click types with dense ids.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    types: Vec<ClickType>,
    by_label: HashMap<String, ClickTypeId>,
    load_course: ClickTypeId,
}

impl Taxonomy {
    pub fn new(mut types: Vec<ClickType>) -> Result<Self, TaxonomyError> {
        if types.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        types.sort_by_key(|t| t.id);
        for (i, t) in types.iter().enumerate() {
            if t.id.index() != i {
                return Err(TaxonomyError::NonDenseIds {
                    expected: types.len(),
                    found: t.id.0,
                });
            }
        }
        let mut by_label = HashMap::new();
        for t in &types {
            if by_label.insert(t.label.clone(), t.id).is_some() {
                return Err(TaxonomyError::DuplicateLabel(t.label.clone()));
            }
        }
        let loads: Vec<_> = types
            .iter()
            .filter(|t| t.label == LOAD_COURSE_LABEL)
            .collect();
        if loads.len() != 1 {
            return Err(TaxonomyError::LoadCourseCount(loads.len()));
        }
        let load_course = loads[0].id;
        Ok(Self {
            types,
            by_label,
            load_course,
        })
    }

    /// The default 37-type taxonomy shipped with the crate.
    pub fn shipped_default() -> Self {
        Self::from_json_str(DEFAULT_TAXONOMY_JSON).expect("shipped taxonomy is valid")
    }

    pub fn from_json_str(json: &str) -> Result<Self, TaxonomyError> {
        let types: Vec<ClickType> = serde_json::from_str(json)?;
        Self::new(types)
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self, TaxonomyError> {
        let types: Vec<ClickType> = serde_json::from_reader(reader)?;
        Self::new(types)
    }

    pub fn vocab_size(&self) -> usize {
        self.types.len()
    }

    pub fn load_course(&self) -> ClickTypeId {
        self.load_course
    }

    pub fn get(&self, id: ClickTypeId) -> Option<&ClickType> {
        self.types.get(id.index())
    }

    pub fn label(&self, id: ClickTypeId) -> &str {
        &self.types[id.index()].label
    }

    pub fn id_for_label(&self, label: &str) -> Option<ClickTypeId> {
        self.by_label.get(label).copied()
    }

    pub fn types(&self) -> &[ClickType] {
        &self.types
    }

    /// Content-loading click types for lecture notes and homework; the default
    /// long-timeout category set for the sessionizer.
    pub fn long_categories(&self) -> std::collections::BTreeSet<ClickTypeId> {
        self.types
            .iter()
            .filter(|t| {
                t.kind == ClickKind::Navigation
                    && matches!(t.area, CourseArea::LectureNotes | CourseArea::Homework)
            })
            .map(|t| t.id)
            .collect()
    }
}

/// A single time-stamped student action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickEvent {
    pub timestamp: DateTime<Utc>,
    pub student: String,
    pub click_type: ClickTypeId,
    pub object: String,
    /// Position in the (sorted) event list; breaks timestamp ties.
    pub seq: u64,
}

/// Whether an assessment week ends in a homework deadline or an exam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekKind {
    Homework,
    Exam,
}

/// One assessment week, the interval [start, deadline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentWeek {
    pub index: usize,
    pub kind: WeekKind,
    pub start: DateTime<Utc>,
    pub deadline: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum WeekError {
    #[error("week {index}: deadline is not after start")]
    EmptyInterval { index: usize },
    #[error("weeks overlap or are out of order at index {index}")]
    Overlap { index: usize },
    #[error("week indices must be 0-based and dense, found {found} at position {position}")]
    BadIndex { found: usize, position: usize },
}

/// Checks that weeks are 0-indexed, ordered by start, and non-overlapping.
pub fn validate_weeks(weeks: &[AssessmentWeek]) -> Result<(), WeekError> {
    for (pos, w) in weeks.iter().enumerate() {
        if w.index != pos {
            return Err(WeekError::BadIndex {
                found: w.index,
                position: pos,
            });
        }
        if w.deadline <= w.start {
            return Err(WeekError::EmptyInterval { index: w.index });
        }
        if pos > 0 && w.start < weeks[pos - 1].deadline {
            return Err(WeekError::Overlap { index: w.index });
        }
    }
    Ok(())
}

/// Per-student grades and attendance polls, keyed by week index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student: String,
    pub grades: BTreeMap<usize, f64>,
    pub lecture_polls: BTreeMap<usize, Vec<bool>>,
    pub recitation_polls: BTreeMap<usize, Vec<bool>>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown click type label {label:?}")]
    UnknownLabel { line: u64, label: String },
    #[error("line {line}: unknown click type id {id}")]
    UnknownId { line: u64, id: u64 },
    #[error("line {line}: grade {grade} outside [0, 1]")]
    GradeOutOfRange { line: u64, grade: f64 },
    #[error("line {line}: duplicate (student, week) entry ({student:?}, {week})")]
    DuplicateEntry {
        line: u64,
        student: String,
        week: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClickTypeField {
    Id(u64),
    Label(String),
}

#[derive(Deserialize)]
struct RawEvent {
    timestamp: String,
    student: String,
    click_type: ClickTypeField,
    object: String,
}

fn resolve_click_type(
    field: ClickTypeField,
    taxonomy: &Taxonomy,
    line: u64,
) -> Result<ClickTypeId, ParseError> {
    match field {
        ClickTypeField::Id(id) => {
            if (id as usize) < taxonomy.vocab_size() {
                Ok(ClickTypeId(id as u16))
            } else {
                Err(ParseError::UnknownId { line, id })
            }
        }
        ClickTypeField::Label(label) => taxonomy
            .id_for_label(&label)
            .ok_or(ParseError::UnknownLabel { line, label }),
    }
}

fn parse_timestamp(raw: &str, line: u64) -> Result<DateTime<Utc>, ParseError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ParseError::Malformed {
            line,
            message: format!("bad timestamp {raw:?}: {e}"),
        })
}

/// Sorts by timestamp keeping ingestion order on ties, then renumbers `seq`
/// so the materialized order is explicit.
fn finish_events(mut events: Vec<ClickEvent>) -> Vec<ClickEvent> {
    events.sort_by_key(|e| e.timestamp);
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    events
}

/// Parses an event log, auto-detecting JSONL (first byte `{`) vs CSV.
pub fn parse_event_log<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Vec<ClickEvent>, ParseError> {
    let mut buf = BufReader::new(reader);
    let looks_like_jsonl = {
        let peek = buf.fill_buf()?;
        peek.iter()
            .find(|b| !b.is_ascii_whitespace())
            .map(|&b| b == b'{')
            .unwrap_or(false)
    };
    if looks_like_jsonl {
        parse_events_jsonl(buf, taxonomy)
    } else {
        parse_events_csv(buf, taxonomy)
    }
}

/// Parses a CSV event log with header `timestamp,student,click_type,object`.
pub fn parse_events_csv<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Vec<ClickEvent>, ParseError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut events = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Header occupies line 1.
        let line = i as u64 + 2;
        let record = record.map_err(|e| ParseError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(ParseError::Malformed {
                line,
                message: format!("expected 4 columns, found {}", record.len()),
            });
        }
        let field = match record[2].parse::<u64>() {
            Ok(id) => ClickTypeField::Id(id),
            Err(_) => ClickTypeField::Label(record[2].to_string()),
        };
        events.push(ClickEvent {
            timestamp: parse_timestamp(&record[0], line)?,
            student: record[1].to_string(),
            click_type: resolve_click_type(field, taxonomy, line)?,
            object: record[3].to_string(),
            seq: i as u64,
        });
    }
    Ok(finish_events(events))
}

/// Parses a JSONL event log, one object per line with keys
/// `timestamp`, `student`, `click_type`, `object`.
pub fn parse_events_jsonl<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Vec<ClickEvent>, ParseError> {
    let mut events = Vec::new();
    let mut seq = 0u64;
    for (i, line_result) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line_result?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| ParseError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        events.push(ClickEvent {
            timestamp: parse_timestamp(&raw.timestamp, line_no)?,
            student: raw.student,
            click_type: resolve_click_type(raw.click_type, taxonomy, line_no)?,
            object: raw.object,
            seq,
        });
        seq += 1;
    }
    Ok(finish_events(events))
}

fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Writes events as CSV with click-type labels.
pub fn write_events_csv<W: Write>(
    writer: W,
    events: &[ClickEvent],
    taxonomy: &Taxonomy,
) -> Result<(), ParseError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["timestamp", "student", "click_type", "object"])
        .map_err(io_from_csv)?;
    for e in events {
        wtr.write_record([
            format_timestamp(e.timestamp).as_str(),
            &e.student,
            taxonomy.label(e.click_type),
            &e.object,
        ])
        .map_err(io_from_csv)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes events as JSONL with click-type labels.
pub fn write_events_jsonl<W: Write>(
    mut writer: W,
    events: &[ClickEvent],
    taxonomy: &Taxonomy,
) -> Result<(), ParseError> {
    for e in events {
        let obj = serde_json::json!({
            "timestamp": format_timestamp(e.timestamp),
            "student": e.student,
            "click_type": taxonomy.label(e.click_type),
            "object": e.object,
        });
        writeln!(writer, "{obj}")?;
    }
    Ok(())
}

fn io_from_csv(e: csv::Error) -> ParseError {
    ParseError::Malformed {
        line: 0,
        message: e.to_string(),
    }
}

fn parse_polls(raw: &str, line: u64) -> Result<Vec<bool>, ParseError> {
    raw.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(ParseError::Malformed {
                line,
                message: format!("poll string must contain only 0/1, found {other:?}"),
            }),
        })
        .collect()
}

/// Parses a roster CSV with columns
/// `student,week,kind,grade,lecture_polls,recitation_polls`.
///
/// Poll columns are 0/1 strings ("101" = present, absent, present); an empty
/// string means no contact class time that week. An empty grade cell leaves
/// the week ungraded.
pub fn parse_roster<R: Read>(reader: R) -> Result<Vec<StudentRecord>, ParseError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut records: BTreeMap<String, StudentRecord> = BTreeMap::new();
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| ParseError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(ParseError::Malformed {
                line,
                message: format!("expected 6 columns, found {}", record.len()),
            });
        }
        let student = record[0].to_string();
        let week: usize = record[1].parse().map_err(|_| ParseError::Malformed {
            line,
            message: format!("bad week index {:?}", &record[1]),
        })?;
        match record[2].trim() {
            "homework" | "exam" => {}
            other => {
                return Err(ParseError::Malformed {
                    line,
                    message: format!("kind must be homework or exam, found {other:?}"),
                })
            }
        }
        if !seen.insert((student.clone(), week)) {
            return Err(ParseError::DuplicateEntry {
                line,
                student,
                week,
            });
        }
        let entry = records
            .entry(student.clone())
            .or_insert_with(|| StudentRecord {
                student,
                grades: BTreeMap::new(),
                lecture_polls: BTreeMap::new(),
                recitation_polls: BTreeMap::new(),
            });
        let grade_raw = record[3].trim();
        if !grade_raw.is_empty() {
            let grade: f64 = grade_raw.parse().map_err(|_| ParseError::Malformed {
                line,
                message: format!("bad grade {grade_raw:?}"),
            })?;
            if !(0.0..=1.0).contains(&grade) {
                return Err(ParseError::GradeOutOfRange { line, grade });
            }
            entry.grades.insert(week, grade);
        }
        entry.lecture_polls.insert(week, parse_polls(&record[4], line)?);
        entry
            .recitation_polls
            .insert(week, parse_polls(&record[5], line)?);
    }
    Ok(records.into_values().collect())
}

fn polls_string(polls: &[bool]) -> String {
    polls.iter().map(|&p| if p { '1' } else { '0' }).collect()
}

/// Writes a roster CSV readable by `parse_roster`. Weeks supply the kind
/// column; a record's week set is the union of its grade and poll keys.
pub fn write_roster_csv<W: Write>(
    writer: W,
    records: &[StudentRecord],
    weeks: &[AssessmentWeek],
) -> Result<(), ParseError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "student",
        "week",
        "kind",
        "grade",
        "lecture_polls",
        "recitation_polls",
    ])
    .map_err(io_from_csv)?;
    for record in records {
        let mut week_ids: Vec<usize> = record
            .grades
            .keys()
            .chain(record.lecture_polls.keys())
            .chain(record.recitation_polls.keys())
            .copied()
            .collect();
        week_ids.sort_unstable();
        week_ids.dedup();
        for week in week_ids {
            let kind = match weeks.iter().find(|w| w.index == week).map(|w| w.kind) {
                Some(WeekKind::Exam) => "exam",
                _ => "homework",
            };
            let grade = record
                .grades
                .get(&week)
                .map(|g| format!("{g}"))
                .unwrap_or_default();
            wtr.write_record([
                record.student.as_str(),
                &week.to_string(),
                kind,
                &grade,
                &polls_string(record.lecture_polls.get(&week).map_or(&[][..], |v| v)),
                &polls_string(record.recitation_polls.get(&week).map_or(&[][..], |v| v)),
            ])
            .map_err(io_from_csv)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Mean of attendance polls; `None` when the week had no contact class time.
pub fn attendance_score(polls: &[bool]) -> Option<f64> {
    if polls.is_empty() {
        None
    } else {
        Some(polls.iter().filter(|&&p| p).count() as f64 / polls.len() as f64)
    }
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("two-sample KS test requires non-empty samples")]
    EmptySample,
}

/// Result of a two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution,
/// Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2).
fn kolmogorov_survival(x: f64) -> f64 {
    if x < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test: D = sup |F_a - F_b| over the empirical CDFs, with the
/// asymptotic p-value at effective sample size n_a n_b / (n_a + n_b).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n || j < m {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&xv), Some(&yv)) => xv.min(yv),
            (Some(&xv), None) => xv,
            (None, Some(&yv)) => yv,
            (None, None) => break,
        };
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    let p_value = kolmogorov_survival(n_eff.sqrt() * d);
    Ok(KsResult {
        statistic: d,
        p_value,
    })
}
