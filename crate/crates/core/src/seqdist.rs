//! Edit-distance family over click-type sequences: Jaro, Jaro-Winkler, and
//! normalized Levenshtein.
//!
//! Tokens are whole click types; a replacement or transposition of one click
//! costs the same no matter how long its label is. The Jaro match window is
//! `max(floor(max_len / 2) - 1, 1)`; the lower bound of 1 is required to
//! reproduce the reference transposition example for length-3 patterns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::ClickTypeId;

/// An n-gram of click types.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern(pub Vec<ClickTypeId>);

impl Pattern {
    pub fn from_ids(ids: &[u16]) -> Self {
        Pattern(ids.iter().map(|&i| ClickTypeId(i)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[ClickTypeId] {
        &self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistanceError {
    #[error("patterns must be non-empty")]
    EmptyPattern,
}

/// Diagnostic breakdown of a Jaro similarity computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaroComputation {
    /// Number of matching tokens.
    pub m: usize,
    /// Half the number of matched tokens whose relative order differs.
    pub t: f64,
    /// Common starting sequence length, capped at 4.
    pub l: usize,
    /// Index window used for matching.
    pub window: usize,
}

/// Orders the pair so matching is independent of argument order: shorter
/// pattern first, ties by token order.
fn canonical<'a>(p1: &'a Pattern, p2: &'a Pattern) -> (&'a [ClickTypeId], &'a [ClickTypeId]) {
    if (p1.len(), &p1.0) <= (p2.len(), &p2.0) {
        (&p1.0, &p2.0)
    } else {
        (&p2.0, &p1.0)
    }
}

/// Jaro similarity with its diagnostic computation.
pub fn jaro(p1: &Pattern, p2: &Pattern) -> Result<(f64, JaroComputation), DistanceError> {
    if p1.is_empty() || p2.is_empty() {
        return Err(DistanceError::EmptyPattern);
    }
    let (a, b) = canonical(p1, p2);
    let window = (b.len() / 2).saturating_sub(1).max(1);

    let mut b_used = vec![false; b.len()];
    let mut a_matched = vec![false; a.len()];
    let mut m = 0usize;
    for (i, &tok) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_used[j] && b[j] == tok {
                b_used[j] = true;
                a_matched[i] = true;
                m += 1;
                break;
            }
        }
    }

    let l = a
        .iter()
        .zip(b.iter())
        .take_while(|(x, y)| x == y)
        .count()
        .min(4);

    if m == 0 {
        let comp = JaroComputation {
            m: 0,
            t: 0.0,
            l,
            window,
        };
        return Ok((0.0, comp));
    }

    let a_seq: Vec<ClickTypeId> = a
        .iter()
        .zip(&a_matched)
        .filter(|(_, &used)| used)
        .map(|(&tok, _)| tok)
        .collect();
    let b_seq: Vec<ClickTypeId> = b
        .iter()
        .zip(&b_used)
        .filter(|(_, &used)| used)
        .map(|(&tok, _)| tok)
        .collect();
    let mismatches = a_seq.iter().zip(&b_seq).filter(|(x, y)| x != y).count();
    let t = mismatches as f64 / 2.0;

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mf = m as f64;
    let j = (mf / na + mf / nb + (mf - t) / mf) / 3.0;
    debug_assert!(l <= m);
    Ok((
        j,
        JaroComputation {
            m,
            t,
            l,
            window,
        },
    ))
}

/// Jaro-Winkler similarity, jw = j + l/10 (1 - j).
pub fn jaro_winkler(p1: &Pattern, p2: &Pattern) -> Result<f64, DistanceError> {
    let (j, comp) = jaro(p1, p2)?;
    Ok(j + comp.l as f64 / 10.0 * (1.0 - j))
}

/// Jaro-Winkler distance, 1 - jw.
pub fn jaro_winkler_distance(p1: &Pattern, p2: &Pattern) -> Result<f64, DistanceError> {
    Ok(1.0 - jaro_winkler(p1, p2)?)
}

/// Levenshtein edit distance (unit costs) divided by the longer length.
pub fn normalized_levenshtein(p1: &Pattern, p2: &Pattern) -> Result<f64, DistanceError> {
    if p1.is_empty() || p2.is_empty() {
        return Err(DistanceError::EmptyPattern);
    }
    let (a, b) = (&p1.0, &p2.0);
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ta) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[b.len()] as f64 / a.len().max(b.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pat(ids: &[u16]) -> Pattern {
        Pattern::from_ids(ids)
    }

    // abc/abd/acb/adb as token sequences.
    const ABC: &[u16] = &[0, 1, 2];
    const ABD: &[u16] = &[0, 1, 3];
    const ACB: &[u16] = &[0, 2, 1];
    const ADB: &[u16] = &[0, 3, 1];

    #[test]
    fn jaro_identity() {
        for ids in [&[5u16][..], &[1, 2, 3], &[4, 4, 4, 4]] {
            let p = pat(ids);
            let (j, comp) = jaro(&p, &p).unwrap();
            assert_relative_eq!(j, 1.0);
            assert_eq!(comp.m, p.len());
            assert_eq!(comp.t, 0.0);
        }
    }

    #[test]
    fn jaro_no_common_tokens_is_zero() {
        let (j, comp) = jaro(&pat(&[0, 1, 2]), &pat(&[7, 8, 9])).unwrap();
        assert_eq!(j, 0.0);
        assert_eq!(comp.m, 0);
    }

    // m = 3 matches within window 1, one transposition pair: j = 8/9.
    #[test]
    fn jaro_single_transposition() {
        let (j, comp) = jaro(&pat(ABC), &pat(ACB)).unwrap();
        assert_relative_eq!(j, 8.0 / 9.0, epsilon = 1e-12);
        assert_eq!(comp.m, 3);
        assert_eq!(comp.t, 1.0);
    }

    #[test]
    fn jaro_winkler_reference_values() {
        // One replacement.
        let d = jaro_winkler_distance(&pat(ABC), &pat(ABD)).unwrap();
        assert!((d - 0.18).abs() <= 0.005, "1-jw(abc,abd) = {d}");
        // One transposition.
        let d = jaro_winkler_distance(&pat(ABC), &pat(ACB)).unwrap();
        assert!((d - 0.10).abs() <= 0.005, "1-jw(abc,acb) = {d}");
        // One replacement plus one transposition.
        let d = jaro_winkler_distance(&pat(ABC), &pat(ADB)).unwrap();
        assert!((d - 0.20).abs() <= 0.005, "1-jw(abc,adb) = {d}");
        // Repeated token, lengths 3 vs 5.
        let d = jaro_winkler_distance(&pat(&[9, 9, 9]), &pat(&[9, 9, 9, 9, 9])).unwrap();
        assert!((d - 0.093).abs() <= 0.005, "1-jw(AAA,AAAAA) = {d}");
    }

    #[test]
    fn levenshtein_reference_values() {
        let d = normalized_levenshtein(&pat(&[9, 9, 9]), &pat(&[9, 9, 9, 9, 9])).unwrap();
        assert_relative_eq!(d, 0.4);
        assert_eq!(normalized_levenshtein(&pat(ABC), &pat(ABC)).unwrap(), 0.0);
        assert_eq!(
            normalized_levenshtein(&pat(&[0, 1, 2]), &pat(&[7, 8, 9])).unwrap(),
            1.0
        );
    }

    #[test]
    fn empty_pattern_errors() {
        let empty = Pattern(vec![]);
        let p = pat(&[1]);
        assert_eq!(jaro(&empty, &p).unwrap_err(), DistanceError::EmptyPattern);
        assert_eq!(
            jaro_winkler(&p, &empty).unwrap_err(),
            DistanceError::EmptyPattern
        );
        assert_eq!(
            normalized_levenshtein(&empty, &empty).unwrap_err(),
            DistanceError::EmptyPattern
        );
    }

    /// Full-matrix DP straight from the recursive definition; the oracle for
    /// the two-row implementation.
    fn levenshtein_oracle(a: &[ClickTypeId], b: &[ClickTypeId]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    proptest! {
        #[test]
        fn levenshtein_matches_oracle(
            a in proptest::collection::vec(0u16..4, 1..=6),
            b in proptest::collection::vec(0u16..4, 1..=6),
        ) {
            let (pa, pb) = (pat(&a), pat(&b));
            let d = normalized_levenshtein(&pa, &pb).unwrap();
            let expected = levenshtein_oracle(pa.tokens(), pb.tokens()) as f64
                / a.len().max(b.len()) as f64;
            prop_assert_eq!(d, expected);
        }

        #[test]
        fn jw_symmetric_in_range_and_at_least_jaro(
            a in proptest::collection::vec(0u16..4, 1..=6),
            b in proptest::collection::vec(0u16..4, 1..=6),
        ) {
            let (pa, pb) = (pat(&a), pat(&b));
            let (j, _) = jaro(&pa, &pb).unwrap();
            let jw = jaro_winkler(&pa, &pb).unwrap();
            let jw_rev = jaro_winkler(&pb, &pa).unwrap();
            prop_assert_eq!(jw, jw_rev);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert!((0.0..=1.0).contains(&jw));
            prop_assert!(jw >= j);
        }
    }
}
