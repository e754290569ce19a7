//! Latent Dirichlet Allocation over session clickstreams (sessions play the
//! role of documents, click types the role of words), fitted by collapsed
//! Gibbs sampling, with UMass topic-coherence diagnostics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_model::ClickTypeId;
use crate::sessionizer::SessionClickstream;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("corpus has no click tokens")]
    EmptyCorpus,
    #[error("invalid LDA config: {0}")]
    BadConfig(String),
    #[error("topic {topic} out of range for k = {k}")]
    TopicOutOfRange { topic: usize, k: usize },
}

/// Gibbs-sampling configuration with Dirichlet priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    /// Per-topic prior vector (asymmetric, normalized to sum to 1).
    pub alpha: Vec<f64>,
    /// Symmetric prior over click types.
    pub beta: f64,
    /// Total Gibbs sweeps.
    pub iterations: usize,
    /// Sweeps discarded before estimates are accumulated.
    pub burn_in: usize,
    pub seed: u64,
}

/// Default asymmetric prior: alpha_t proportional to 1 / (t + sqrt(k)),
/// normalized to sum to 1.
pub fn default_alpha(k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=k).map(|t| 1.0 / (t as f64 + (k as f64).sqrt())).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|a| a / sum).collect()
}

impl LdaConfig {
    pub fn with_defaults(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: default_alpha(k),
            beta: 0.01,
            iterations: 1000,
            burn_in: 200,
            seed,
        }
    }

    fn validate(&self) -> Result<(), LdaError> {
        if self.k < 1 {
            return Err(LdaError::BadConfig("k must be at least 1".into()));
        }
        if self.alpha.len() != self.k {
            return Err(LdaError::BadConfig(format!(
                "alpha has {} entries for k = {}",
                self.alpha.len(),
                self.k
            )));
        }
        if self.alpha.iter().any(|&a| a <= 0.0) || self.beta <= 0.0 {
            return Err(LdaError::BadConfig("priors must be positive".into()));
        }
        if self.iterations < 1 || self.burn_in >= self.iterations {
            return Err(LdaError::BadConfig(
                "iterations must exceed burn_in and be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted model: per-topic click-type distributions and per-session mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub config: LdaConfig,
    pub vocab_size: usize,
    /// k x V; rows sum to 1.
    pub phi: Vec<Vec<f64>>,
    /// M x k; rows sum to 1.
    pub theta: Vec<Vec<f64>>,
    /// Final per-position topic assignments.
    #[serde(skip)]
    pub z: Vec<Vec<usize>>,
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (t, &w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            return t;
        }
    }
    weights.len() - 1
}

struct GibbsState {
    docs: Vec<Vec<usize>>,
    z: Vec<Vec<usize>>,
    n_dt: Vec<Vec<u32>>,
    n_tw: Vec<Vec<u32>>,
    n_t: Vec<u32>,
}

impl GibbsState {
    fn init(docs: Vec<Vec<usize>>, k: usize, vocab_size: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut n_dt = vec![vec![0u32; k]; docs.len()];
        let mut n_tw = vec![vec![0u32; vocab_size]; k];
        let mut n_t = vec![0u32; k];
        let mut z = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.len());
            for &w in doc {
                let t = rng.random_range(0..k);
                zd.push(t);
                n_dt[d][t] += 1;
                n_tw[t][w] += 1;
                n_t[t] += 1;
            }
            z.push(zd);
        }
        Self {
            docs,
            z,
            n_dt,
            n_tw,
            n_t,
        }
    }

    fn sweep(&mut self, config: &LdaConfig, vocab_size: usize, rng: &mut ChaCha12Rng) {
        let v_beta = vocab_size as f64 * config.beta;
        let mut weights = vec![0.0; config.k];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.z[d][i];
                self.n_dt[d][old] -= 1;
                self.n_tw[old][w] -= 1;
                self.n_t[old] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (self.n_dt[d][t] as f64 + config.alpha[t])
                        * (self.n_tw[t][w] as f64 + config.beta)
                        / (self.n_t[t] as f64 + v_beta);
                }
                let new = sample_categorical(&weights, rng);
                self.z[d][i] = new;
                self.n_dt[d][new] += 1;
                self.n_tw[new][w] += 1;
                self.n_t[new] += 1;
            }
        }
        self.check_conservation();
    }

    fn check_conservation(&self) {
        debug_assert!(self
            .docs
            .iter()
            .zip(&self.n_dt)
            .all(|(doc, row)| row.iter().map(|&c| c as usize).sum::<usize>() == doc.len()));
        debug_assert!((0..self.n_t.len()).all(|t| {
            self.n_tw[t].iter().map(|&c| c as u64).sum::<u64>() == self.n_t[t] as u64
        }));
    }

    fn phi_estimate(&self, config: &LdaConfig, vocab_size: usize) -> Vec<Vec<f64>> {
        let v_beta = vocab_size as f64 * config.beta;
        self.n_tw
            .iter()
            .zip(&self.n_t)
            .map(|(row, &nt)| {
                let denom = nt as f64 + v_beta;
                let out: Vec<f64> =
                    row.iter().map(|&c| (c as f64 + config.beta) / denom).collect();
                debug_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                out
            })
            .collect()
    }

    fn theta_estimate(&self, config: &LdaConfig) -> Vec<Vec<f64>> {
        let alpha_sum: f64 = config.alpha.iter().sum();
        self.docs
            .iter()
            .zip(&self.n_dt)
            .map(|(doc, row)| {
                let denom = doc.len() as f64 + alpha_sum;
                let out: Vec<f64> = row
                    .iter()
                    .zip(&config.alpha)
                    .map(|(&c, &a)| (c as f64 + a) / denom)
                    .collect();
                debug_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                out
            })
            .collect()
    }
}

fn add_matrix(acc: &mut [Vec<f64>], m: &[Vec<f64>]) {
    for (ar, mr) in acc.iter_mut().zip(m) {
        for (a, &v) in ar.iter_mut().zip(mr) {
            *a += v;
        }
    }
}

fn scale_matrix(m: &mut [Vec<f64>], factor: f64) {
    for row in m {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
}

/// Fits the model by collapsed Gibbs sampling. Estimates are averaged over
/// post-burn-in sweeps; deterministic given the config seed.
pub fn fit_lda(
    sessions: &[SessionClickstream],
    vocab_size: usize,
    config: &LdaConfig,
) -> Result<TopicModel, LdaError> {
    let docs: Vec<Vec<usize>> = sessions
        .iter()
        .map(|s| s.clicks.iter().map(|c| c.click_type.index()).collect())
        .collect();
    fit_lda_docs(docs, vocab_size, config)
}

/// As `fit_lda`, over bare token-id documents.
pub fn fit_lda_docs(
    docs: Vec<Vec<usize>>,
    vocab_size: usize,
    config: &LdaConfig,
) -> Result<TopicModel, LdaError> {
    config.validate()?;
    if docs.iter().map(Vec::len).sum::<usize>() == 0 {
        return Err(LdaError::EmptyCorpus);
    }
    if let Some(&w) = docs.iter().flatten().find(|&&w| w >= vocab_size) {
        return Err(LdaError::BadConfig(format!(
            "token id {w} outside vocabulary of size {vocab_size}"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(docs, config.k, vocab_size, &mut rng);
    state.check_conservation();

    let mut phi_acc = vec![vec![0.0; vocab_size]; config.k];
    let mut theta_acc = vec![vec![0.0; config.k]; state.docs.len()];
    let mut samples = 0usize;
    for sweep in 0..config.iterations {
        state.sweep(config, vocab_size, &mut rng);
        if sweep >= config.burn_in {
            add_matrix(&mut phi_acc, &state.phi_estimate(config, vocab_size));
            add_matrix(&mut theta_acc, &state.theta_estimate(config));
            samples += 1;
        }
    }
    scale_matrix(&mut phi_acc, 1.0 / samples as f64);
    scale_matrix(&mut theta_acc, 1.0 / samples as f64);

    Ok(TopicModel {
        config: config.clone(),
        vocab_size,
        phi: phi_acc,
        theta: theta_acc,
        z: state.z,
    })
}

impl TopicModel {
    /// Top-j click types of a topic by weight, descending.
    pub fn top_click_types(
        &self,
        topic: usize,
        j: usize,
    ) -> Result<Vec<(ClickTypeId, f64)>, LdaError> {
        let row = self.phi.get(topic).ok_or(LdaError::TopicOutOfRange {
            topic,
            k: self.config.k,
        })?;
        let mut ranked: Vec<(ClickTypeId, f64)> = row
            .iter()
            .enumerate()
            .map(|(w, &p)| (ClickTypeId(w as u16), p))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(j);
        Ok(ranked)
    }

    /// Folds a new session in by Gibbs sampling with phi held fixed; returns
    /// the averaged post-burn-in topic mixture.
    pub fn infer_theta(&self, tokens: &[ClickTypeId], seed: u64) -> Vec<f64> {
        let k = self.config.k;
        let alpha = &self.config.alpha;
        let alpha_sum: f64 = alpha.iter().sum();
        if tokens.is_empty() {
            return alpha.iter().map(|&a| a / alpha_sum).collect();
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut z: Vec<usize> = tokens.iter().map(|_| rng.random_range(0..k)).collect();
        let mut n_t = vec![0u32; k];
        for &t in &z {
            n_t[t] += 1;
        }
        let mut acc = vec![0.0; k];
        let mut samples = 0usize;
        let mut weights = vec![0.0; k];
        for sweep in 0..self.config.iterations {
            for (i, tok) in tokens.iter().enumerate() {
                let w = tok.index();
                n_t[z[i]] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (n_t[t] as f64 + alpha[t]) * self.phi[t][w];
                }
                let new = sample_categorical(&weights, &mut rng);
                z[i] = new;
                n_t[new] += 1;
            }
            if sweep >= self.config.burn_in {
                let denom = tokens.len() as f64 + alpha_sum;
                for (t, a) in acc.iter_mut().enumerate() {
                    *a += (n_t[t] as f64 + alpha[t]) / denom;
                }
                samples += 1;
            }
        }
        for v in acc.iter_mut() {
            *v /= samples as f64;
        }
        acc
    }
}

/// UMass coherence of one topic over the given corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub score: f64,
    /// Pair terms skipped because the conditioning type never occurs.
    pub skipped_terms: usize,
}

/// Sum over ordered top-type pairs (w_i ranked above w_j) of
/// log((D(w_i, w_j) + 1) / D(w_j)), with D counting session co-occurrence.
pub fn coherence(
    model: &TopicModel,
    sessions: &[SessionClickstream],
    topic: usize,
    top_j: usize,
) -> Result<Coherence, LdaError> {
    let top = model.top_click_types(topic, top_j)?;
    let docs: Vec<std::collections::BTreeSet<usize>> = sessions
        .iter()
        .map(|s| s.clicks.iter().map(|c| c.click_type.index()).collect())
        .collect();
    let occurs = |w: usize| docs.iter().filter(|d| d.contains(&w)).count();
    let co_occurs = |a: usize, b: usize| {
        docs.iter()
            .filter(|d| d.contains(&a) && d.contains(&b))
            .count()
    };
    let mut score = 0.0;
    let mut skipped_terms = 0;
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            let (wi, wj) = (top[i].0.index(), top[j].0.index());
            let d_j = occurs(wj);
            if d_j == 0 {
                skipped_terms += 1;
                continue;
            }
            score += ((co_occurs(wi, wj) as f64 + 1.0) / d_j as f64).ln();
        }
    }
    Ok(Coherence {
        score,
        skipped_terms,
    })
}
