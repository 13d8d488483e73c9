//! Topic block: per-item topic-maps θ and the topic-word matrix β.
//!
//! Topic-maps are either fitted here with a logistic-normal topic model
//! (Dirichlet topics, Gaussian item coordinates, softmax topic assignment)
//! or imported from an external topic modeller.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{LtpError, Result};
use crate::optim::{maximize_cg, CgOptions};

pub const DEFAULT_NU: f64 = 0.01;
pub const DEFAULT_ALPHA: f64 = 1.0;
const SIMPLEX_TOL: f64 = 1e-9;

/// Topic-word distributions over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    #[serde(rename = "T")]
    pub num_topics: usize,
    pub vocab: Vec<String>,
    /// One row per topic, each a distribution over `vocab`.
    pub beta: Vec<Vec<f64>>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_nu() -> f64 {
    DEFAULT_NU
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TopicModel {
    /// Indices of the `k` most probable words of `topic`, highest first.
    pub fn top_words(&self, topic: usize, k: usize) -> Vec<usize> {
        let row = &self.beta[topic];
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// One item's topic-map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMap {
    pub item_id: String,
    pub theta: Vec<f64>,
}

/// Topic-maps of a set of items, stored as a dense row-major table.
#[derive(Debug, Clone, Default)]
pub struct TopicMaps {
    num_topics: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    theta: Vec<f64>,
}

impl TopicMaps {
    pub fn new(num_topics: usize) -> Self {
        Self {
            num_topics,
            ..Default::default()
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inserts a topic-map that must already be a simplex.
    pub fn insert(&mut self, item_id: impl Into<String>, theta: &[f64]) -> Result<()> {
        let item_id = item_id.into();
        if theta.len() != self.num_topics {
            return Err(LtpError::TopicCountMismatch {
                expected: self.num_topics,
                found: theta.len(),
            });
        }
        let sum: f64 = theta.iter().sum();
        if theta.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(LtpError::InvalidTopicMap {
                item: item_id,
                reason: "not a probability vector".into(),
            });
        }
        match self.index.get(&item_id) {
            Some(&row) => {
                self.theta[row * self.num_topics..(row + 1) * self.num_topics]
                    .copy_from_slice(theta);
            }
            None => {
                self.index.insert(item_id.clone(), self.ids.len());
                self.ids.push(item_id);
                self.theta.extend_from_slice(theta);
            }
        }
        Ok(())
    }

    /// Inserts raw nonnegative weights, normalizing them onto the simplex.
    pub fn insert_weights(&mut self, item_id: impl Into<String>, weights: &[f64]) -> Result<()> {
        let item_id = item_id.into();
        if weights.len() != self.num_topics {
            return Err(LtpError::TopicCountMismatch {
                expected: self.num_topics,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LtpError::InvalidTopicMap {
                item: item_id,
                reason: "negative or non-finite weight".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(LtpError::InvalidTopicMap {
                item: item_id,
                reason: "all-zero row".into(),
            });
        }
        let theta: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        self.insert(item_id, &theta)
    }

    pub fn get(&self, item_id: &str) -> Option<&[f64]> {
        self.index.get(item_id).map(|&row| self.row(row))
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.theta[row * self.num_topics..(row + 1) * self.num_topics]
    }

    pub fn item_id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(|(row, id)| (id.as_str(), self.row(row)))
    }

    pub fn to_records(&self) -> Vec<TopicMap> {
        self.iter()
            .map(|(id, theta)| TopicMap {
                item_id: id.to_string(),
                theta: theta.to_vec(),
            })
            .collect()
    }

    /// Items of `wanted` that have no topic-map.
    pub fn missing<'a, I>(&self, wanted: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out: Vec<String> = wanted
            .into_iter()
            .filter(|id| !self.index.contains_key(*id))
            .map(str::to_string)
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Builds topic-maps from imported rows. Each row is normalized onto the
/// simplex; `expected_topics`, when given, must match every row.
pub fn import_topic_maps<I>(rows: I, expected_topics: Option<usize>) -> Result<TopicMaps>
where
    I: IntoIterator<Item = TopicMap>,
{
    let mut maps: Option<TopicMaps> = expected_topics.map(TopicMaps::new);
    for row in rows {
        let maps = maps.get_or_insert_with(|| TopicMaps::new(row.theta.len()));
        maps.insert_weights(row.item_id, &row.theta)?;
    }
    Ok(maps.unwrap_or_default())
}

/// Lowercases, splits on non-alphanumerics and drops tokens shorter than 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Lexicographically ordered vocabulary of words occurring at least
/// `min_count` times across `documents`.
pub fn build_vocab<S: AsRef<str>>(documents: &[S], min_count: usize) -> Result<Vec<String>> {
    if documents.is_empty() {
        return Err(LtpError::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in documents {
        for tok in tokenize(doc.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let vocab: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(w, _)| w)
        .collect();
    if vocab.is_empty() {
        return Err(LtpError::EmptyVocabulary);
    }
    Ok(vocab)
}

/// A document as (vocabulary index, count) pairs.
#[derive(Debug, Clone)]
pub struct BagOfWords {
    pub item_id: String,
    pub counts: Vec<(usize, f64)>,
}

impl BagOfWords {
    pub fn from_text(item_id: impl Into<String>, text: &str, vocab: &[String]) -> Self {
        let index: HashMap<&str, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&w) = index.get(tok.as_str()) {
                *counts.entry(w).or_default() += 1.0;
            }
        }
        Self {
            item_id: item_id.into(),
            counts: counts.into_iter().collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TopicFitConfig {
    pub num_topics: usize,
    pub nu: f64,
    pub alpha: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub seed: u64,
}

impl Default for TopicFitConfig {
    fn default() -> Self {
        Self {
            num_topics: 10,
            nu: DEFAULT_NU,
            alpha: DEFAULT_ALPHA,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicFit {
    pub model: TopicModel,
    pub maps: TopicMaps,
    /// Variational Dirichlet parameters of the topics.
    pub beta_tilde: Vec<Vec<f64>>,
    /// Gaussian means of the item coordinates.
    pub theta_tilde: Vec<Vec<f64>>,
    /// Variational objective after initialization and after each sweep.
    pub objective_trace: Vec<f64>,
    /// False when `max_iters` was exhausted first.
    pub converged: bool,
}

/// Fits topics to a tokenized corpus with a seeded spread-out initialization.
pub fn fit_topics(docs: &[BagOfWords], vocab: &[String], cfg: &TopicFitConfig) -> Result<TopicFit> {
    validate(docs, vocab, cfg)?;
    let init = seeded_beta_tilde(docs, vocab.len(), cfg);
    fit_topics_from(docs, vocab, init, cfg)
}

fn validate(docs: &[BagOfWords], vocab: &[String], cfg: &TopicFitConfig) -> Result<()> {
    if cfg.num_topics == 0 {
        return Err(LtpError::InvalidParameter(
            "topic count must be at least 1".into(),
        ));
    }
    if docs.is_empty() {
        return Err(LtpError::EmptyCorpus);
    }
    if vocab.is_empty() {
        return Err(LtpError::EmptyVocabulary);
    }
    if !(cfg.nu > 0.0) || !(cfg.alpha > 0.0) {
        return Err(LtpError::InvalidParameter(
            "nu and alpha must be positive".into(),
        ));
    }
    Ok(())
}

/// k-means++ style seeding: each topic starts from the word counts of a
/// document drawn with probability proportional to its squared cosine
/// distance from the documents already chosen.
fn seeded_beta_tilde(
    docs: &[BagOfWords],
    vocab_size: usize,
    cfg: &TopicFitConfig,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let norms: Vec<f64> = docs
        .iter()
        .map(|d| {
            d.counts
                .iter()
                .map(|(_, c)| c * c)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let dense = |d: &BagOfWords| {
        let mut v = vec![0.0; vocab_size];
        for &(w, c) in &d.counts {
            v[w] = c;
        }
        v
    };
    let cosine = |a: usize, center: &[f64], center_norm: f64| {
        let dotp: f64 = docs[a].counts.iter().map(|&(w, c)| c * center[w]).sum();
        dotp / (norms[a] * center_norm)
    };

    let mut min_dist = vec![f64::INFINITY; docs.len()];
    let mut beta_tilde = Vec::with_capacity(cfg.num_topics);
    let mut chosen = rng.random_range(0..docs.len());
    let total_tokens: f64 = docs.iter().map(BagOfWords::total).sum();
    let jitter = total_tokens / (cfg.num_topics * vocab_size) as f64;
    for _ in 0..cfg.num_topics {
        let center = dense(&docs[chosen]);
        let center_norm = norms[chosen];
        for (i, d) in min_dist.iter_mut().enumerate() {
            let dist = 1.0 - cosine(i, &center, center_norm);
            *d = d.min(dist.max(0.0));
        }
        let row: Vec<f64> = center
            .iter()
            .map(|c| cfg.nu + c + jitter * rng.random::<f64>())
            .collect();
        beta_tilde.push(row);

        let weights: Vec<f64> = min_dist.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        chosen = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = docs.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..docs.len())
        };
    }
    beta_tilde
}

struct DocState {
    theta_tilde: Vec<f64>,
    /// Responsibilities, one row of length T per distinct word of the doc.
    omega: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn expected_log_beta(beta_tilde: &[Vec<f64>]) -> Vec<Vec<f64>> {
    beta_tilde
        .iter()
        .map(|row| {
            let total = digamma(row.iter().sum());
            row.iter().map(|b| digamma(*b) - total).collect()
        })
        .collect()
}

/// Fits topics starting from the given variational Dirichlet parameters.
///
/// Each sweep updates the token responsibilities, the topic Dirichlets and
/// then each item's Gaussian mean; every step is a coordinate ascent on the
/// same variational objective, so the objective trace never decreases.
pub fn fit_topics_from(
    docs: &[BagOfWords],
    vocab: &[String],
    beta_tilde_init: Vec<Vec<f64>>,
    cfg: &TopicFitConfig,
) -> Result<TopicFit> {
    validate(docs, vocab, cfg)?;
    let t = cfg.num_topics;
    let v = vocab.len();
    if beta_tilde_init.len() != t || beta_tilde_init.iter().any(|r| r.len() != v) {
        return Err(LtpError::InvalidParameter(
            "initial topic matrix has the wrong shape".into(),
        ));
    }

    let mut beta_tilde = beta_tilde_init;
    let mut states: Vec<DocState> = docs
        .iter()
        .map(|d| DocState {
            theta_tilde: vec![0.0; t],
            omega: vec![1.0 / t as f64; d.counts.len() * t],
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut elog_beta = expected_log_beta(&beta_tilde);
    // Responsibilities are made consistent with the initial topics before the
    // first objective evaluation.
    update_omega(docs, &mut states, &elog_beta, t);
    trace.push(objective(docs, &states, &beta_tilde, &elog_beta, cfg));

    for sweep in 0..cfg.max_iters {
        if sweep > 0 {
            update_omega(docs, &mut states, &elog_beta, t);
        }

        for row in beta_tilde.iter_mut() {
            row.iter_mut().for_each(|b| *b = cfg.nu);
        }
        for (doc, st) in docs.iter().zip(&states) {
            for (slot, &(w, c)) in doc.counts.iter().enumerate() {
                for k in 0..t {
                    beta_tilde[k][w] += c * st.omega[slot * t + k];
                }
            }
        }
        elog_beta = expected_log_beta(&beta_tilde);

        let alpha2 = cfg.alpha * cfg.alpha;
        docs.par_iter()
            .zip(states.par_iter_mut())
            .try_for_each(|(doc, st)| update_theta_tilde(doc, st, t, alpha2))?;

        let obj = objective(docs, &states, &beta_tilde, &elog_beta, cfg);
        let prev = *trace.last().expect("trace seeded");
        trace.push(obj);
        if ((obj - prev) / prev.abs().max(1e-300)).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "topic fit stopped after {} sweeps without converging",
            cfg.max_iters
        );
    }

    let beta: Vec<Vec<f64>> = beta_tilde
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|b| b / s).collect()
        })
        .collect();
    let mut maps = TopicMaps::new(t);
    for (doc, st) in docs.iter().zip(&states) {
        let lse = log_sum_exp(&st.theta_tilde);
        let mut theta: Vec<f64> = st.theta_tilde.iter().map(|x| (x - lse).exp()).collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|x| *x /= s);
        maps.insert(doc.item_id.clone(), &theta)?;
    }

    Ok(TopicFit {
        model: TopicModel {
            num_topics: t,
            vocab: vocab.to_vec(),
            beta,
            nu: cfg.nu,
            alpha: cfg.alpha,
        },
        maps,
        beta_tilde,
        theta_tilde: states.into_iter().map(|s| s.theta_tilde).collect(),
        objective_trace: trace,
        converged,
    })
}

fn update_omega(docs: &[BagOfWords], states: &mut [DocState], elog_beta: &[Vec<f64>], t: usize) {
    docs.par_iter()
        .zip(states.par_iter_mut())
        .for_each(|(doc, st)| {
            let mut logits = vec![0.0; t];
            for (slot, &(w, _)) in doc.counts.iter().enumerate() {
                for k in 0..t {
                    logits[k] = st.theta_tilde[k] + elog_beta[k][w];
                }
                let lse = log_sum_exp(&logits);
                for k in 0..t {
                    st.omega[slot * t + k] = (logits[k] - lse).exp();
                }
            }
        });
}

/// Ascent on −‖θ̃‖²/(2α²) + Σ_k N_k θ̃_k − n·lse(θ̃), the θ̃-dependent part of
/// the objective after the optimal log-sum-exp bound parameter is plugged in.
fn update_theta_tilde(doc: &BagOfWords, st: &mut DocState, t: usize, alpha2: f64) -> Result<()> {
    if t == 1 {
        st.theta_tilde[0] = 0.0;
        return Ok(());
    }
    let mut expected = vec![0.0; t];
    for (slot, &(_, c)) in doc.counts.iter().enumerate() {
        for k in 0..t {
            expected[k] += c * st.omega[slot * t + k];
        }
    }
    let n = doc.total();
    let f = |x: &[f64], g: &mut [f64]| {
        let lse = log_sum_exp(x);
        let mut val = -n * lse;
        for k in 0..t {
            let p = (x[k] - lse).exp();
            g[k] = -x[k] / alpha2 + expected[k] - n * p;
            val += -x[k] * x[k] / (2.0 * alpha2) + expected[k] * x[k];
        }
        val
    };
    let opts = CgOptions {
        max_iters: 200,
        grad_tol: 1e-9,
        rel_tol: 1e-15,
    };
    let out = maximize_cg(f, st.theta_tilde.clone(), &opts)?;
    st.theta_tilde = out.x;
    Ok(())
}

/// Variational objective of the topic block, dropping terms that are
/// constant in the variational parameters: the Gaussian normalizers and
/// entropy of θ, the −α²/2 per token from the expected log-normalizer, and
/// the Dirichlet prior normalizer.
fn objective(
    docs: &[BagOfWords],
    states: &[DocState],
    beta_tilde: &[Vec<f64>],
    elog_beta: &[Vec<f64>],
    cfg: &TopicFitConfig,
) -> f64 {
    let t = cfg.num_topics;
    let alpha2 = cfg.alpha * cfg.alpha;

    let mut topic_terms = 0.0;
    for (row, elog) in beta_tilde.iter().zip(elog_beta) {
        let sum: f64 = row.iter().sum();
        topic_terms -= ln_gamma(sum);
        for (b, e) in row.iter().zip(elog) {
            topic_terms += (cfg.nu - 1.0) * e + ln_gamma(*b) - (b - 1.0) * e;
        }
    }

    let doc_terms: Vec<f64> = docs
        .par_iter()
        .zip(states.par_iter())
        .map(|(doc, st)| {
            let lse = log_sum_exp(&st.theta_tilde);
            let mut val: f64 = -st.theta_tilde.iter().map(|x| x * x).sum::<f64>() / (2.0 * alpha2);
            for (slot, &(w, c)) in doc.counts.iter().enumerate() {
                for k in 0..t {
                    let om = st.omega[slot * t + k];
                    if om > 0.0 {
                        val += c * om * (st.theta_tilde[k] - lse + elog_beta[k][w] - om.ln());
                    }
                }
            }
            val
        })
        .collect();
    topic_terms + doc_terms.iter().sum::<f64>()
}
