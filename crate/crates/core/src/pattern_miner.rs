//! Clustered n-gram pipeline: extract n-grams from session clickstreams,
//! keep the most frequent share per length, cluster candidates by
//! Jaro-Winkler distance with average linkage, and characterize the cut
//! clusters as strategies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::ClickTypeId;
use crate::seqdist::{jaro_winkler_distance, Pattern};
use crate::sessionizer::SessionClickstream;

/// Counts of n-grams of one fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramTable {
    pub n: usize,
    pub counts: BTreeMap<Pattern, u64>,
}

impl NgramTable {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Error)]
pub enum MineError {
    #[error("clustering needs at least 2 candidate patterns, found {found}")]
    TooFewCandidates { found: usize },
    #[error("cluster count {k} out of range 1..={leaves}")]
    BadClusterCount { k: usize, leaves: usize },
    #[error("cluster has no member long enough for a 3-click representative")]
    NoRepresentative,
    #[error("candidate share must lie in (0, 1], got {0}")]
    BadShare(f64),
}

/// Every session of length L contributes max(L - n + 1, 0) n-grams.
pub fn extract_ngrams(sessions: &[SessionClickstream], n: usize) -> NgramTable {
    assert!(n >= 1, "n-gram length must be at least 1");
    let mut counts: BTreeMap<Pattern, u64> = BTreeMap::new();
    for session in sessions {
        let types = session.click_types();
        for window in types.windows(n) {
            *counts.entry(Pattern(window.to_vec())).or_insert(0) += 1;
        }
    }
    NgramTable { n, counts }
}

/// Keeps the top `ceil(share * distinct)` patterns of each table, ranked by
/// count descending with ties broken by token order, and returns the union.
pub fn select_candidates(tables: &[NgramTable], share: f64) -> Result<Vec<Pattern>, MineError> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(MineError::BadShare(share));
    }
    let mut out = Vec::new();
    for table in tables {
        if table.counts.is_empty() {
            continue;
        }
        let mut ranked: Vec<(&Pattern, u64)> =
            table.counts.iter().map(|(p, &c)| (p, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = ((share * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
        out.extend(ranked[..keep].iter().map(|(p, _)| (*p).clone()));
    }
    Ok(out)
}

/// One agglomerative merge; cluster ids follow the usual convention of
/// leaves 0..n-1 and merge i producing id n+i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Stepwise dendrogram over candidate patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<Pattern>,
    pub merges: Vec<Merge>,
}

/// Average inter-cluster distance with a fixed summation order (outer loop
/// over the cluster holding the smallest leaf), so repeated evaluations are
/// bit-identical. Member lists must be sorted ascending.
fn average_distance(a: &[usize], b: &[usize], d0: &[Vec<f64>]) -> f64 {
    let (outer, inner) = if a[0] <= b[0] { (a, b) } else { (b, a) };
    let mut sum = 0.0;
    for &i in outer {
        for &j in inner {
            sum += d0[i][j];
        }
    }
    sum / (a.len() * b.len()) as f64
}

struct ActiveCluster {
    id: usize,
    members: Vec<usize>,
}

/// (distance, tie-break key of smallest leaf indices, positions in the
/// active list) of the best merge candidate.
type MergeCandidate = (f64, (usize, usize), (usize, usize));

/// Bottom-up average-linkage clustering over 1 - jw distance.
///
/// Candidates are canonically ordered (by length, then tokens) before leaf
/// indices are assigned, so the result is invariant to input order. Ties in
/// the minimum average distance are broken by the smallest leaf indices of
/// the pair.
pub fn agglomerative_cluster(candidates: &[Pattern]) -> Result<Dendrogram, MineError> {
    if candidates.len() < 2 {
        return Err(MineError::TooFewCandidates {
            found: candidates.len(),
        });
    }
    let mut leaves: Vec<Pattern> = candidates.to_vec();
    leaves.sort_by(|a, b| (a.len(), &a.0).cmp(&(b.len(), &b.0)));

    let n = leaves.len();
    let d0: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        jaro_winkler_distance(&leaves[i], &leaves[j])
                            .expect("candidates are non-empty")
                    }
                })
                .collect()
        })
        .collect();

    let mut active: Vec<ActiveCluster> = (0..n)
        .map(|i| ActiveCluster {
            id: i,
            members: vec![i],
        })
        .collect();
    let mut merges: Vec<Merge> = Vec::with_capacity(n - 1);

    while active.len() > 1 {
        let mut best: Option<MergeCandidate> = None;
        for i in 0..active.len() {
            for j in (i + 1)..active.len() {
                let d = average_distance(&active[i].members, &active[j].members, &d0);
                let (la, lb) = (active[i].members[0], active[j].members[0]);
                let key = (la.min(lb), la.max(lb));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, (i, j)));
                }
            }
        }
        let (height, _, (i, j)) = best.unwrap();
        let right = active.remove(j);
        let left = active.remove(i);
        let (a, b) = if left.members[0] <= right.members[0] {
            (left.id, right.id)
        } else {
            (right.id, left.id)
        };
        if let Some(last) = merges.last() {
            debug_assert!(height >= last.height, "average linkage is monotone");
        }
        merges.push(Merge { a, b, height });
        let mut members = left.members;
        members.extend(right.members);
        members.sort_unstable();
        active.push(ActiveCluster {
            id: n + merges.len() - 1,
            members,
        });
    }

    Ok(Dendrogram { leaves, merges })
}

/// A group of candidate patterns read as one student strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCluster {
    pub label: String,
    pub members: Vec<Pattern>,
    /// Click-type frequency over member tokens, weighted by corpus counts.
    pub click_type_shares: BTreeMap<ClickTypeId, f64>,
    /// Corpus-most-frequent length-3 member (or the most frequent member's
    /// first 3 tokens).
    pub representative: Pattern,
}

fn pattern_count(counts: &BTreeMap<Pattern, u64>, p: &Pattern) -> u64 {
    // Patterns absent from the table (e.g. hand-built fixtures) count once.
    counts.get(p).copied().unwrap_or(1)
}

fn pick_representative(
    members: &[Pattern],
    counts: &BTreeMap<Pattern, u64>,
) -> Result<Pattern, MineError> {
    fn best<'a>(
        ps: impl Iterator<Item = &'a Pattern>,
        counts: &BTreeMap<Pattern, u64>,
    ) -> Option<Pattern> {
        ps.max_by(|a, b| {
            pattern_count(counts, a)
                .cmp(&pattern_count(counts, b))
                .then_with(|| b.cmp(a))
        })
        .cloned()
    }
    if let Some(rep) = best(members.iter().filter(|p| p.len() == 3), counts) {
        return Ok(rep);
    }
    let longest = best(members.iter(), counts).ok_or(MineError::NoRepresentative)?;
    if longest.len() < 3 {
        return Err(MineError::NoRepresentative);
    }
    Ok(Pattern(longest.0[..3].to_vec()))
}

/// Undoes the last k-1 merges and characterizes each remaining cluster.
/// `counts` are corpus n-gram counts used to weight shares and pick
/// representatives; `labels` are optional human-supplied names by cluster
/// position.
pub fn cut_dendrogram(
    dendrogram: &Dendrogram,
    k: usize,
    counts: &BTreeMap<Pattern, u64>,
    labels: &[String],
) -> Result<Vec<StrategyCluster>, MineError> {
    let n = dendrogram.leaves.len();
    if k < 1 || k > n {
        return Err(MineError::BadClusterCount { k, leaves: n });
    }
    let mut members_of: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    for merge in &dendrogram.merges[..n - k] {
        let left = members_of[merge.a].take().expect("cluster merged once");
        let right = members_of[merge.b].take().expect("cluster merged once");
        let mut joined = left;
        joined.extend(right);
        joined.sort_unstable();
        members_of.push(Some(joined));
    }
    let mut groups: Vec<Vec<usize>> = members_of.into_iter().flatten().collect();
    groups.sort_by_key(|g| g[0]);

    let mut clusters = Vec::with_capacity(groups.len());
    for (ci, group) in groups.iter().enumerate() {
        let members: Vec<Pattern> = group.iter().map(|&i| dendrogram.leaves[i].clone()).collect();
        let mut token_weight: BTreeMap<ClickTypeId, f64> = BTreeMap::new();
        let mut total = 0.0;
        for p in &members {
            let w = pattern_count(counts, p) as f64;
            for &tok in p.tokens() {
                *token_weight.entry(tok).or_insert(0.0) += w;
                total += w;
            }
        }
        let click_type_shares: BTreeMap<ClickTypeId, f64> =
            token_weight.into_iter().map(|(t, w)| (t, w / total)).collect();
        let representative = pick_representative(&members, counts)?;
        let label = labels
            .get(ci)
            .cloned()
            .unwrap_or_else(|| format!("cluster-{ci}"));
        clusters.push(StrategyCluster {
            label,
            members,
            click_type_shares,
            representative,
        });
    }
    Ok(clusters)
}

/// Lossless nested view of a dendrogram for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DendroNode {
    Leaf {
        pattern: Pattern,
    },
    Branch {
        left: Box<DendroNode>,
        right: Box<DendroNode>,
        height: f64,
    },
}

impl DendroNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            DendroNode::Leaf { .. } => 1,
            DendroNode::Branch { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// Converts the merge list into a nested tree.
pub fn export_dendrogram(dendrogram: &Dendrogram) -> DendroNode {
    let mut nodes: Vec<Option<DendroNode>> = dendrogram
        .leaves
        .iter()
        .map(|p| {
            Some(DendroNode::Leaf {
                pattern: p.clone(),
            })
        })
        .collect();
    for merge in &dendrogram.merges {
        let left = nodes[merge.a].take().expect("node used once");
        let right = nodes[merge.b].take().expect("node used once");
        nodes.push(Some(DendroNode::Branch {
            left: Box::new(left),
            right: Box::new(right),
            height: merge.height,
        }));
    }
    nodes
        .into_iter()
        .rev()
        .flatten()
        .next()
        .expect("dendrogram has at least one node")
}

/// Settings for the full mining pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub ngram_lengths: Vec<usize>,
    pub candidate_share: f64,
    pub k: usize,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            ngram_lengths: vec![3, 4, 5],
            candidate_share: 0.01,
            k: 9,
            labels: Vec::new(),
        }
    }
}

/// Output of the full extract → select → cluster → cut pipeline.
#[derive(Debug, Clone)]
pub struct MineOutput {
    pub candidates: Vec<Pattern>,
    pub dendrogram: Dendrogram,
    pub clusters: Vec<StrategyCluster>,
    /// Corpus counts of all extracted n-grams, merged across lengths.
    pub counts: BTreeMap<Pattern, u64>,
}

pub fn mine(sessions: &[SessionClickstream], config: &MinerConfig) -> Result<MineOutput, MineError> {
    let tables: Vec<NgramTable> = config
        .ngram_lengths
        .iter()
        .map(|&n| extract_ngrams(sessions, n))
        .collect();
    let candidates = select_candidates(&tables, config.candidate_share)?;
    let mut counts = BTreeMap::new();
    for table in tables {
        counts.extend(table.counts);
    }
    let dendrogram = agglomerative_cluster(&candidates)?;
    let k = config.k.min(dendrogram.leaves.len());
    let clusters = cut_dendrogram(&dendrogram, k, &counts, &config.labels)?;
    Ok(MineOutput {
        candidates,
        dendrogram,
        clusters,
        counts,
    })
}
