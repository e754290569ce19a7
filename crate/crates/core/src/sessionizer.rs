//! Three-stage session splitting: by assessment week, at every
//! `Load course` click, then at category-dependent timeout thresholds.
//! Also provides the log-waiting-time KDE used to justify the thresholds.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::{AssessmentWeek, ClickEvent, ClickTypeId, Taxonomy};
use crate::stats_util::{mean_sd, quantile_sorted};

/// One study session: a student's ordered clicks within one assessment week.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionClickstream {
    pub student: String,
    pub week: usize,
    pub clicks: Vec<ClickEvent>,
}

impl SessionClickstream {
    pub fn click_types(&self) -> Vec<ClickTypeId> {
        self.clicks.iter().map(|c| c.click_type).collect()
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }
}

/// Timeout thresholds: the long one applies when the earlier click loaded
/// lecture-notes or homework content, the short one otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutPolicy {
    pub long_minutes: f64,
    pub short_minutes: f64,
    pub long_categories: BTreeSet<ClickTypeId>,
}

#[derive(Debug, Error)]
pub enum SessionizeError {
    #[error("timeout thresholds must satisfy long >= short > 0 (got long={long}, short={short})")]
    BadThresholds { long: f64, short: f64 },
    #[error("clock skew: negative gap of {gap_minutes} minutes for student {student:?}")]
    NegativeGap { student: String, gap_minutes: f64 },
    #[error("waiting-time KDE needs at least 2 gaps, found {found}")]
    TooFewGaps { found: usize },
}

impl TimeoutPolicy {
    pub fn new(
        long_minutes: f64,
        short_minutes: f64,
        long_categories: BTreeSet<ClickTypeId>,
    ) -> Result<Self, SessionizeError> {
        if !(short_minutes > 0.0 && long_minutes >= short_minutes) {
            return Err(SessionizeError::BadThresholds {
                long: long_minutes,
                short: short_minutes,
            });
        }
        Ok(Self {
            long_minutes,
            short_minutes,
            long_categories,
        })
    }

    /// Reference defaults: 60-minute and 5-minute thresholds over the
    /// taxonomy's content-loading categories.
    pub fn defaults(taxonomy: &Taxonomy) -> Self {
        Self {
            long_minutes: 60.0,
            short_minutes: 5.0,
            long_categories: taxonomy.long_categories(),
        }
    }

    fn threshold_for(&self, click_type: ClickTypeId) -> f64 {
        if self.long_categories.contains(&click_type) {
            self.long_minutes
        } else {
            self.short_minutes
        }
    }
}

fn gap_minutes(earlier: &ClickEvent, later: &ClickEvent) -> f64 {
    (later.timestamp - earlier.timestamp).num_milliseconds() as f64 / 60_000.0
}

/// Assigns each event to the week containing its timestamp ([start, deadline)
/// intervals); returns the per-week partition and the dropped-event count.
pub fn split_by_week(
    events: &[ClickEvent],
    weeks: &[AssessmentWeek],
) -> (BTreeMap<usize, Vec<ClickEvent>>, usize) {
    let mut by_week: BTreeMap<usize, Vec<ClickEvent>> = BTreeMap::new();
    let mut dropped = 0usize;
    for e in events {
        match weeks
            .iter()
            .find(|w| e.timestamp >= w.start && e.timestamp < w.deadline)
        {
            Some(w) => by_week.entry(w.index).or_default().push(e.clone()),
            None => dropped += 1,
        }
    }
    (by_week, dropped)
}

/// Starts a new sub-stream at every `Load course` click; a leading segment
/// before the first one is kept as its own sub-stream.
pub fn split_on_load_course(
    stream: &[ClickEvent],
    load_course: ClickTypeId,
) -> Vec<Vec<ClickEvent>> {
    let mut out: Vec<Vec<ClickEvent>> = Vec::new();
    for e in stream {
        let start_new = out.is_empty() || e.click_type == load_course;
        if start_new {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(e.clone());
    }
    out
}

/// Splits between clicks i and i+1 iff the gap exceeds the threshold for the
/// category of click i.
pub fn split_on_timeout(
    stream: &[ClickEvent],
    policy: &TimeoutPolicy,
) -> Result<Vec<Vec<ClickEvent>>, SessionizeError> {
    let mut out: Vec<Vec<ClickEvent>> = Vec::new();
    for (i, e) in stream.iter().enumerate() {
        let mut start_new = i == 0;
        if i > 0 {
            let prev = &stream[i - 1];
            let gap = gap_minutes(prev, e);
            if gap < 0.0 {
                return Err(SessionizeError::NegativeGap {
                    student: e.student.clone(),
                    gap_minutes: gap,
                });
            }
            start_new = gap > policy.threshold_for(prev.click_type);
        }
        if start_new {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(e.clone());
    }
    Ok(out)
}

/// Result of the full three-stage split.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionizeOutput {
    pub sessions: Vec<SessionClickstream>,
    pub dropped_events: usize,
}

/// Runs the three stages in order (week, Load-course, timeout) per student.
/// Sessions come back sorted by (student, week, first click).
pub fn sessionize(
    events: &[ClickEvent],
    weeks: &[AssessmentWeek],
    policy: &TimeoutPolicy,
    load_course: ClickTypeId,
) -> Result<SessionizeOutput, SessionizeError> {
    let mut by_student: BTreeMap<&str, Vec<ClickEvent>> = BTreeMap::new();
    for e in events {
        by_student.entry(&e.student).or_default().push(e.clone());
    }
    let students: Vec<(&str, Vec<ClickEvent>)> = by_student.into_iter().collect();

    let per_student: Vec<Result<(Vec<SessionClickstream>, usize), SessionizeError>> = students
        .into_par_iter()
        .map(|(student, mut stream)| {
            stream.sort_by_key(|e| (e.timestamp, e.seq));
            let (by_week, dropped) = split_by_week(&stream, weeks);
            let mut sessions = Vec::new();
            for (week, week_events) in by_week {
                for segment in split_on_load_course(&week_events, load_course) {
                    for clicks in split_on_timeout(&segment, policy)? {
                        sessions.push(SessionClickstream {
                            student: student.to_string(),
                            week,
                            clicks,
                        });
                    }
                }
            }
            Ok((sessions, dropped))
        })
        .collect();

    let mut sessions = Vec::new();
    let mut dropped_events = 0;
    for r in per_student {
        let (s, d) = r?;
        sessions.extend(s);
        dropped_events += d;
    }
    Ok(SessionizeOutput {
        sessions,
        dropped_events,
    })
}

/// Sub-clickstreams after the first two stages only (week and Load-course
/// splits); the input the waiting-time KDE diagnostics are taken over.
pub fn load_course_segments(
    events: &[ClickEvent],
    weeks: &[AssessmentWeek],
    load_course: ClickTypeId,
) -> Vec<Vec<ClickEvent>> {
    let mut by_student: BTreeMap<&str, Vec<ClickEvent>> = BTreeMap::new();
    for e in events {
        by_student.entry(&e.student).or_default().push(e.clone());
    }
    let mut segments = Vec::new();
    for (_, mut stream) in by_student {
        stream.sort_by_key(|e| (e.timestamp, e.seq));
        let (by_week, _) = split_by_week(&stream, weeks);
        for (_, week_events) in by_week {
            segments.extend(split_on_load_course(&week_events, load_course));
        }
    }
    segments
}

/// Gaussian KDE over the natural log of waiting-time minutes, with
/// Silverman's rule-of-thumb bandwidth.
#[derive(Debug, Clone)]
pub struct LogWaitingTimeKde {
    log_minutes: Vec<f64>,
    bandwidth: f64,
}

impl LogWaitingTimeKde {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.log_minutes.len()
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = (2.0 * std::f64::consts::PI).sqrt() * h;
        let sum: f64 = self
            .log_minutes
            .iter()
            .map(|&xi| (-0.5 * ((x - xi) / h).powi(2)).exp())
            .sum();
        sum / (self.log_minutes.len() as f64 * norm)
    }
}

/// KDE of log waiting times between consecutive clicks of the given streams.
/// With a category filter, only gaps whose *earlier* click is in the set are
/// used. Zero-length gaps have no log and are skipped.
pub fn waiting_time_log_kde(
    streams: &[Vec<ClickEvent>],
    category_filter: Option<&BTreeSet<ClickTypeId>>,
) -> Result<LogWaitingTimeKde, SessionizeError> {
    let mut log_minutes = Vec::new();
    for stream in streams {
        for pair in stream.windows(2) {
            if let Some(filter) = category_filter {
                if !filter.contains(&pair[0].click_type) {
                    continue;
                }
            }
            let gap = gap_minutes(&pair[0], &pair[1]);
            if gap > 0.0 {
                log_minutes.push(gap.ln());
            }
        }
    }
    if log_minutes.len() < 2 {
        return Err(SessionizeError::TooFewGaps {
            found: log_minutes.len(),
        });
    }
    log_minutes.sort_by(f64::total_cmp);
    let (_, sd) = mean_sd(&log_minutes);
    let iqr = quantile_sorted(&log_minutes, 0.75) - quantile_sorted(&log_minutes, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    let n = log_minutes.len() as f64;
    let bandwidth = if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        // Degenerate sample (all gaps equal): fixed width on the log scale.
        0.1
    };
    Ok(LogWaitingTimeKde {
        log_minutes,
        bandwidth,
    })
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    student: String,
    week: usize,
    click_type_ids: Vec<u16>,
    timestamps: Vec<String>,
}

/// Writes sessions as JSONL, one `{student, week, click_type_ids,
/// timestamps}` object per line.
pub fn write_sessions_jsonl<W: std::io::Write>(
    mut writer: W,
    sessions: &[SessionClickstream],
) -> std::io::Result<()> {
    for s in sessions {
        let record = SessionRecord {
            student: s.student.clone(),
            week: s.week,
            click_type_ids: s.clicks.iter().map(|c| c.click_type.0).collect(),
            timestamps: s
                .clicks
                .iter()
                .map(|c| c.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true))
                .collect(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Reads sessions written by `write_sessions_jsonl`. Object ids are not part
/// of the format; reconstructed clicks carry an empty object.
pub fn read_sessions_jsonl<R: std::io::Read>(
    reader: R,
) -> std::io::Result<Vec<SessionClickstream>> {
    use std::io::BufRead;
    let mut sessions = Vec::new();
    let mut seq = 0u64;
    for (i, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            )
        })?;
        if record.click_type_ids.len() != record.timestamps.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: ids and timestamps differ in length", i + 1),
            ));
        }
        let clicks: Vec<ClickEvent> = record
            .click_type_ids
            .iter()
            .zip(&record.timestamps)
            .map(|(&ct, ts)| {
                let timestamp = chrono::DateTime::parse_from_rfc3339(ts)
                    .map_err(|e| {
                        std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("line {}: bad timestamp {ts:?}: {e}", i + 1),
                        )
                    })?
                    .with_timezone(&chrono::Utc);
                seq += 1;
                Ok(ClickEvent {
                    timestamp,
                    student: record.student.clone(),
                    click_type: ClickTypeId(ct),
                    object: String::new(),
                    seq: seq - 1,
                })
            })
            .collect::<std::io::Result<_>>()?;
        sessions.push(SessionClickstream {
            student: record.student,
            week: record.week,
            clicks,
        });
    }
    Ok(sessions)
}

/// Descriptive statistics over session lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub count: usize,
    pub mean_length: f64,
    pub sd_length: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

pub fn session_summary(sessions: &[SessionClickstream]) -> SessionSummary {
    if sessions.is_empty() {
        return SessionSummary {
            count: 0,
            mean_length: 0.0,
            sd_length: 0.0,
            min_length: 0,
            max_length: 0,
            p25: 0.0,
            p50: 0.0,
            p75: 0.0,
            p90: 0.0,
        };
    }
    let mut lengths: Vec<f64> = sessions.iter().map(|s| s.len() as f64).collect();
    lengths.sort_by(f64::total_cmp);
    let (mean, sd) = mean_sd(&lengths);
    SessionSummary {
        count: sessions.len(),
        mean_length: mean,
        sd_length: sd,
        min_length: lengths[0] as usize,
        max_length: lengths[lengths.len() - 1] as usize,
        p25: quantile_sorted(&lengths, 0.25),
        p50: quantile_sorted(&lengths, 0.50),
        p75: quantile_sorted(&lengths, 0.75),
        p90: quantile_sorted(&lengths, 0.90),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::course_model::WeekKind;
    use approx::assert_relative_eq;
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
    }

    fn ev(student: &str, minutes: f64, click_type: u16, seq: u64) -> ClickEvent {
        ClickEvent {
            timestamp: t0() + chrono::Duration::milliseconds((minutes * 60_000.0) as i64),
            student: student.into(),
            click_type: ClickTypeId(click_type),
            object: String::new(),
            seq,
        }
    }

    fn week(index: usize, start_day: i64, end_day: i64) -> AssessmentWeek {
        AssessmentWeek {
            index,
            kind: WeekKind::Homework,
            start: t0() + chrono::Duration::days(start_day),
            deadline: t0() + chrono::Duration::days(end_day),
        }
    }

    const LOAD: u16 = 20;
    const OTHER: u16 = 25;
    const LONG: u16 = 0;

    fn policy() -> TimeoutPolicy {
        TimeoutPolicy::new(60.0, 5.0, [ClickTypeId(LONG)].into_iter().collect()).unwrap()
    }

    #[test]
    fn policy_rejects_short_above_long() {
        assert!(TimeoutPolicy::new(5.0, 60.0, BTreeSet::new()).is_err());
        assert!(TimeoutPolicy::new(5.0, 0.0, BTreeSet::new()).is_err());
    }

    #[test]
    fn week_split_boundary_conventions() {
        let weeks = vec![week(0, 0, 7), week(1, 7, 14)];
        let events = vec![
            ev("s", 0.0, OTHER, 0),                 // exactly at week 0 start
            ev("s", 7.0 * 24.0 * 60.0, OTHER, 1),   // exactly at week 1 start
            ev("s", 15.0 * 24.0 * 60.0, OTHER, 2),  // after final deadline
        ];
        let (by_week, dropped) = split_by_week(&events, &weeks);
        assert_eq!(by_week[&0].len(), 1);
        assert_eq!(by_week[&1].len(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn week_split_partition_sizes_sum() {
        let weeks = vec![week(0, 0, 7), week(1, 7, 14)];
        let events: Vec<_> = (0..10)
            .map(|i| ev("s", i as f64 * 24.0 * 60.0, OTHER, i))
            .collect();
        let (by_week, dropped) = split_by_week(&events, &weeks);
        let total: usize = by_week.values().map(Vec::len).sum();
        assert_eq!(total + dropped, 10);
        assert_eq!(total, 10);
    }

    #[test]
    fn load_course_split_rules() {
        let s = vec![
            ev("s", 0.0, LOAD, 0),
            ev("s", 1.0, OTHER, 1),
            ev("s", 2.0, OTHER, 2),
            ev("s", 3.0, LOAD, 3),
            ev("s", 4.0, OTHER, 4),
        ];
        let parts = split_on_load_course(&s, ClickTypeId(LOAD));
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 3);
        assert_eq!(parts[1].len(), 2);

        // No Load course: single segment.
        let parts = split_on_load_course(&s[1..3], ClickTypeId(LOAD));
        assert_eq!(parts.len(), 1);

        // Leading segment before the first Load course is kept.
        let s2 = vec![ev("s", 0.0, OTHER, 0), ev("s", 1.0, LOAD, 1)];
        let parts = split_on_load_course(&s2, ClickTypeId(LOAD));
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 1);

        // Degenerate repeats.
        let s3 = vec![ev("s", 0.0, LOAD, 0), ev("s", 1.0, LOAD, 1)];
        let parts = split_on_load_course(&s3, ClickTypeId(LOAD));
        assert_eq!(parts.len(), 2);
    }

    #[test]
    fn timeout_split_rules() {
        // Gaps [1, 70] with the middle click in a long category: 70 > 60 splits.
        let s = vec![
            ev("s", 0.0, OTHER, 0),
            ev("s", 1.0, LONG, 1),
            ev("s", 71.0, OTHER, 2),
        ];
        let parts = split_on_timeout(&s, &policy()).unwrap();
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1]);

        // Gap 4 with a short-category click: stays one session.
        let s = vec![ev("s", 0.0, OTHER, 0), ev("s", 4.0, OTHER, 1)];
        assert_eq!(split_on_timeout(&s, &policy()).unwrap().len(), 1);

        // Gap 6 with a short-category click: splits.
        let s = vec![ev("s", 0.0, OTHER, 0), ev("s", 6.0, OTHER, 1)];
        assert_eq!(split_on_timeout(&s, &policy()).unwrap().len(), 2);
    }

    #[test]
    fn timeout_negative_gap_errors() {
        let s = vec![ev("s", 5.0, OTHER, 0), ev("s", 1.0, OTHER, 1)];
        assert!(matches!(
            split_on_timeout(&s, &policy()),
            Err(SessionizeError::NegativeGap { .. })
        ));
    }

    #[test]
    fn sessionize_singleton_and_empty() {
        let weeks = vec![week(0, 0, 7)];
        let out = sessionize(&[ev("s", 1.0, OTHER, 0)], &weeks, &policy(), ClickTypeId(LOAD)).unwrap();
        assert_eq!(out.sessions.len(), 1);
        assert_eq!(out.sessions[0].len(), 1);
        let out = sessionize(&[], &weeks, &policy(), ClickTypeId(LOAD)).unwrap();
        assert!(out.sessions.is_empty());
        assert_eq!(out.dropped_events, 0);
    }

    #[test]
    fn sessions_jsonl_roundtrip() {
        let sessions = vec![
            SessionClickstream {
                student: "s1".into(),
                week: 0,
                clicks: vec![ev("s1", 0.0, LOAD, 0), ev("s1", 1.5, OTHER, 1)],
            },
            SessionClickstream {
                student: "s2".into(),
                week: 3,
                clicks: vec![ev("s2", 9.0, LONG, 2)],
            },
        ];
        let mut buf = Vec::new();
        write_sessions_jsonl(&mut buf, &sessions).unwrap();
        let back = read_sessions_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (orig, got) in sessions.iter().zip(&back) {
            assert_eq!(orig.student, got.student);
            assert_eq!(orig.week, got.week);
            assert_eq!(orig.click_types(), got.click_types());
            let times: Vec<_> = orig.clicks.iter().map(|c| c.timestamp).collect();
            let got_times: Vec<_> = got.clicks.iter().map(|c| c.timestamp).collect();
            assert_eq!(times, got_times);
        }
    }

    #[test]
    fn summary_descriptives() {
        let mk = |len: usize| SessionClickstream {
            student: "s".into(),
            week: 0,
            clicks: (0..len).map(|i| ev("s", i as f64, OTHER, i as u64)).collect(),
        };
        let sessions = vec![mk(1), mk(2), mk(3)];
        let summary = session_summary(&sessions);
        assert_relative_eq!(summary.mean_length, 2.0);
        assert_eq!(summary.max_length, 3);

        let single = session_summary(&sessions[..1]);
        assert_eq!(single.sd_length, 0.0);
    }

    #[test]
    fn summary_matches_brute_force_on_hundred_sessions() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(44);
        let sessions: Vec<SessionClickstream> = (0..100)
            .map(|_| {
                let len = rng.random_range(1..=20);
                SessionClickstream {
                    student: "s".into(),
                    week: 0,
                    clicks: (0..len).map(|i| ev("s", i as f64, OTHER, i as u64)).collect(),
                }
            })
            .collect();
        let summary = session_summary(&sessions);

        let lengths: Vec<f64> = sessions.iter().map(|s| s.len() as f64).collect();
        let mean = lengths.iter().sum::<f64>() / 100.0;
        let sd = (lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        let mut sorted = lengths.clone();
        sorted.sort_by(f64::total_cmp);
        // Median by hand: average of the middle pair for even counts, which
        // the interpolated quantile reproduces.
        let median = (sorted[49] + sorted[50]) / 2.0;

        assert_eq!(summary.count, 100);
        assert!((summary.mean_length - mean).abs() < 1e-12);
        assert!((summary.sd_length - sd).abs() < 1e-12);
        assert_eq!(summary.min_length as f64, sorted[0]);
        assert_eq!(summary.max_length as f64, sorted[99]);
        assert!((summary.p50 - median).abs() < 1e-12);
    }

    #[test]
    fn kde_peak_and_normalization() {
        // All gaps of 1 minute: density peaks at ln(1) = 0.
        let stream: Vec<_> = (0..20).map(|i| ev("s", i as f64, OTHER, i as u64)).collect();
        let kde = waiting_time_log_kde(&[stream], None).unwrap();
        let grid: Vec<f64> = (0..2001).map(|i| -10.0 + i as f64 * 0.01).collect();
        let peak = grid
            .iter()
            .copied()
            .max_by(|a, b| kde.evaluate(*a).total_cmp(&kde.evaluate(*b)))
            .unwrap();
        assert!(peak.abs() < 0.05, "peak at {peak}");

        // Trapezoid integral over [-10, 10] is 1 within 0.01.
        let mut integral = 0.0;
        for w in grid.windows(2) {
            integral += 0.005 * (kde.evaluate(w[0]) + kde.evaluate(w[1]));
        }
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn kde_bimodal_gap_mixture() {
        // Half the gaps 1 minute, half 8 minutes.
        let mut events = Vec::new();
        let mut minute = 0.0;
        for i in 0..60u64 {
            events.push(ev("s", minute, OTHER, i));
            minute += if i % 2 == 0 { 1.0 } else { 8.0 };
        }
        let kde = waiting_time_log_kde(&[events], None).unwrap();
        let grid: Vec<f64> = (0..400).map(|i| -1.0 + i as f64 * 0.01).collect();
        let mut maxima = Vec::new();
        for i in 1..grid.len() - 1 {
            let (a, b, c) = (
                kde.evaluate(grid[i - 1]),
                kde.evaluate(grid[i]),
                kde.evaluate(grid[i + 1]),
            );
            if b > a && b > c {
                maxima.push(grid[i]);
            }
        }
        assert_eq!(maxima.len(), 2, "maxima at {maxima:?}");
        assert!((maxima[0] - 0.0).abs() < 0.3);
        assert!((maxima[1] - 8.0f64.ln()).abs() < 0.3);
    }

    #[test]
    fn kde_too_few_gaps_errors() {
        let stream = vec![ev("s", 0.0, OTHER, 0), ev("s", 1.0, OTHER, 1)];
        assert!(matches!(
            waiting_time_log_kde(&[stream], Some(&BTreeSet::new())),
            Err(SessionizeError::TooFewGaps { found: 0 })
        ));
    }

    /// Brute-force reference: one pass deciding each boundary directly.
    fn oracle_session_lengths(
        events: &[ClickEvent],
        weeks: &[AssessmentWeek],
        policy: &TimeoutPolicy,
        load: ClickTypeId,
    ) -> (Vec<usize>, usize) {
        let mut kept: Vec<(&ClickEvent, usize)> = Vec::new();
        let mut dropped = 0;
        for e in events {
            match weeks
                .iter()
                .find(|w| e.timestamp >= w.start && e.timestamp < w.deadline)
            {
                Some(w) => kept.push((e, w.index)),
                None => dropped += 1,
            }
        }
        kept.sort_by_key(|(e, _)| (e.student.clone(), e.timestamp, e.seq));
        let mut lengths = Vec::new();
        let mut current = 0usize;
        for i in 0..kept.len() {
            let boundary = if i == 0 {
                true
            } else {
                let (prev, wp) = kept[i - 1];
                let (cur, wc) = kept[i];
                prev.student != cur.student
                    || wp != wc
                    || cur.click_type == load
                    || gap_minutes(prev, cur) > policy.threshold_for(prev.click_type)
            };
            if boundary && current > 0 {
                lengths.push(current);
                current = 0;
            }
            current += 1;
        }
        if current > 0 {
            lengths.push(current);
        }
        (lengths, dropped)
    }

    proptest! {
        #[test]
        fn conservation_order_and_oracle(
            raw in proptest::collection::vec(
                (0u8..3, 0.0f64..20_000.0, prop_oneof![Just(LOAD), Just(LONG), Just(OTHER)]),
                1..60,
            )
        ) {
            let mut events: Vec<ClickEvent> = raw
                .iter()
                .enumerate()
                .map(|(i, (s, minutes, ct))| ev(&format!("s{s}"), *minutes, *ct, i as u64))
                .collect();
            events.sort_by_key(|e| (e.timestamp, e.seq));
            for (i, e) in events.iter_mut().enumerate() {
                e.seq = i as u64;
            }
            let weeks = vec![week(0, 0, 7), week(1, 7, 13)]; // leaves a gap after day 13
            let pol = policy();
            let out = sessionize(&events, &weeks, &pol, ClickTypeId(LOAD)).unwrap();

            // Conservation.
            let total: usize = out.sessions.iter().map(SessionClickstream::len).sum();
            prop_assert_eq!(total + out.dropped_events, events.len());

            // Session invariants: in-week clicks, timeout rule, internal Loads.
            for s in &out.sessions {
                let w = &weeks[s.week];
                for c in &s.clicks {
                    prop_assert!(c.timestamp >= w.start && c.timestamp < w.deadline);
                }
                for pair in s.clicks.windows(2) {
                    prop_assert!(pair[1].click_type != ClickTypeId(LOAD));
                    let gap = gap_minutes(&pair[0], &pair[1]);
                    prop_assert!(gap <= pol.threshold_for(pair[0].click_type));
                }
            }

            // Order preservation within (student, week).
            for s in &out.sessions {
                prop_assert!(s.clicks.windows(2).all(|w| (w[0].timestamp, w[0].seq) <= (w[1].timestamp, w[1].seq)));
            }

            // Against the one-pass oracle.
            let (oracle_lengths, oracle_dropped) = oracle_session_lengths(&events, &weeks, &pol, ClickTypeId(LOAD));
            let lengths: Vec<usize> = out.sessions.iter().map(SessionClickstream::len).collect();
            prop_assert_eq!(lengths, oracle_lengths);
            prop_assert_eq!(out.dropped_events, oracle_dropped);

            // Monotonicity: halving both thresholds never lowers the session count.
            let tighter = TimeoutPolicy::new(
                pol.long_minutes / 2.0,
                pol.short_minutes / 2.0,
                pol.long_categories.clone(),
            ).unwrap();
            let tighter_out = sessionize(&events, &weeks, &tighter, ClickTypeId(LOAD)).unwrap();
            prop_assert!(tighter_out.sessions.len() >= out.sessions.len());
        }
    }
}
