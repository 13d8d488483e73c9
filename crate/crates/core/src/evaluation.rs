//! Metrics and tests on learned personalization vectors: recovery of the
//! personalized topics, telling the personalized list from the vanilla one,
//! attributing lists to users, and surfacing evidence.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LtpError, Result};
use crate::inference::{run_ltp_inf, Dataset, InferenceOptions};
use crate::perm_models::{dot, f_log_prob, g_log_prob, ModelParams};
use crate::rankings::{Permutation, QueryObservation};
use crate::topic_model::TopicMaps;

/// Topic indices by decreasing η̃, ties by index.
pub fn rank_topics(eta: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eta.len()).collect();
    idx.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub cutoff: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// Precision of the top k topics, k = 1, 3, 5.
    pub p_at: BTreeMap<usize, f64>,
    /// Precision at cutoff |T_act| + k, k = 1, 3.
    pub p_plus: BTreeMap<usize, f64>,
    pub r_precision: f64,
    /// Average precision; the mean over profiles is MAP.
    pub average_precision: f64,
    pub pr_curve: Vec<PrPoint>,
}

pub const P_AT_CUTOFFS: [usize; 3] = [1, 3, 5];
pub const P_PLUS_OFFSETS: [usize; 2] = [1, 3];

/// |top-k ∩ T_act| / k. A cutoff beyond the ranking is clipped to its length.
pub fn precision_at(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let k = k.min(ranked.len());
    if k == 0 {
        return 0.0;
    }
    ranked[..k].iter().filter(|t| relevant.contains(t)).count() as f64 / k as f64
}

pub fn retrieval_metrics(ranked: &[usize], t_act: &[usize]) -> Result<RetrievalMetrics> {
    if t_act.is_empty() {
        return Err(LtpError::InvalidParameter(
            "the set of personalized topics is empty".into(),
        ));
    }
    let relevant: HashSet<usize> = t_act.iter().copied().collect();
    let r = relevant.len();

    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut pr_curve = Vec::with_capacity(ranked.len());
    for (pos, t) in ranked.iter().enumerate() {
        if relevant.contains(t) {
            hits += 1;
            ap += hits as f64 / (pos + 1) as f64;
        }
        pr_curve.push(PrPoint {
            cutoff: pos + 1,
            precision: hits as f64 / (pos + 1) as f64,
            recall: hits as f64 / r as f64,
        });
    }
    Ok(RetrievalMetrics {
        p_at: P_AT_CUTOFFS
            .iter()
            .map(|&k| (k, precision_at(ranked, &relevant, k)))
            .collect(),
        p_plus: P_PLUS_OFFSETS
            .iter()
            .map(|&k| (k, precision_at(ranked, &relevant, r + k)))
            .collect(),
        r_precision: precision_at(ranked, &relevant, r),
        average_precision: ap / r as f64,
        pr_curve,
    })
}

/// Averages metrics over profiles; the averaged average precision is MAP.
pub fn mean_metrics(all: &[RetrievalMetrics]) -> Option<RetrievalMetrics> {
    let first = all.first()?;
    let n = all.len() as f64;
    let avg_map =
        |get: &dyn Fn(&RetrievalMetrics) -> &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
            get(first)
                .keys()
                .map(|k| (*k, all.iter().map(|m| get(m)[k]).sum::<f64>() / n))
                .collect()
        };
    let len = all.iter().map(|m| m.pr_curve.len()).min().unwrap_or(0);
    let pr_curve = (0..len)
        .map(|i| PrPoint {
            cutoff: i + 1,
            precision: all.iter().map(|m| m.pr_curve[i].precision).sum::<f64>() / n,
            recall: all.iter().map(|m| m.pr_curve[i].recall).sum::<f64>() / n,
        })
        .collect();
    Some(RetrievalMetrics {
        p_at: avg_map(&|m| &m.p_at),
        p_plus: avg_map(&|m| &m.p_plus),
        r_precision: all.iter().map(|m| m.r_precision).sum::<f64>() / n,
        average_precision: all.iter().map(|m| m.average_precision).sum::<f64>() / n,
        pr_curve,
    })
}

/// Which of two lists was judged personalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    FirstPersonalized,
    /// Also the outcome of a tie.
    FirstVanilla,
}

/// How the likelihood of a list given the other is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disambiguator {
    pub eta: Vec<f64>,
    pub lambda: f64,
    /// When set, use the mixture τ̄·g + (1 − τ̄)·f with (τ̄, μ) instead of g.
    pub mixture: Option<(f64, f64)>,
}

impl Disambiguator {
    pub fn pure(eta: Vec<f64>, lambda: f64) -> Self {
        Self {
            eta,
            lambda,
            mixture: None,
        }
    }

    fn log_likelihood(
        &self,
        pi: &Permutation,
        sigma: &Permutation,
        maps: &TopicMaps,
    ) -> Result<f64> {
        let lg = g_log_prob(pi, sigma, &self.eta, maps, self.lambda)?;
        Ok(match self.mixture {
            None => lg,
            Some((tau, mu)) => {
                let lf = f_log_prob(pi, sigma, mu)?;
                let (a, b) = (tau.ln() + lg, (1.0 - tau).ln() + lf);
                let m = a.max(b);
                if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + ((a - m).exp() + (b - m).exp()).ln()
                }
            }
        })
    }

    /// `l1` is declared personalized when p(l1 | l2) > p(l2 | l1).
    pub fn decide(&self, l1: &Permutation, l2: &Permutation, maps: &TopicMaps) -> Result<Label> {
        let forward = self.log_likelihood(l1, l2, maps)?;
        let backward = self.log_likelihood(l2, l1, maps)?;
        Ok(if forward > backward {
            Label::FirstPersonalized
        } else {
            Label::FirstVanilla
        })
    }
}

pub fn disambiguate(
    l1: &Permutation,
    l2: &Permutation,
    eta: &[f64],
    maps: &TopicMaps,
    lambda: f64,
) -> Result<Label> {
    Disambiguator::pure(eta.to_vec(), lambda).decide(l1, l2, maps)
}

/// Fraction of re-ranked pairs labelled correctly. Each pair is presented in
/// a random order drawn from `seed`. Returns `None` when no pair was
/// re-ranked.
pub fn disambiguation_accuracy(
    test: &[QueryObservation],
    model: &Disambiguator,
    maps: &TopicMaps,
    seed: u64,
) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(&QueryObservation, bool)> = test
        .iter()
        .filter(|o| o.is_reranked())
        .map(|o| (o, rng.random::<bool>()))
        .collect();
    if cases.is_empty() {
        return Ok(None);
    }
    let correct: Vec<bool> = cases
        .par_iter()
        .map(|(o, personalized_first)| {
            let (l1, l2) = if *personalized_first {
                (&o.pi, &o.sigma)
            } else {
                (&o.sigma, &o.pi)
            };
            let want = if *personalized_first {
                Label::FirstPersonalized
            } else {
                Label::FirstVanilla
            };
            Ok(model.decide(l1, l2, maps)? == want)
        })
        .collect::<Result<_>>()?;
    Ok(Some(
        correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64,
    ))
}

/// The user whose η makes π most likely under g; ties go to the smallest
/// user id.
pub fn classify_user(
    obs: &QueryObservation,
    profiles: &BTreeMap<String, Vec<f64>>,
    maps: &TopicMaps,
    lambda: f64,
) -> Result<String> {
    if profiles.len() < 2 {
        return Err(LtpError::InvalidParameter(
            "classification needs at least two profiles".into(),
        ));
    }
    let mut best: Option<(&String, f64)> = None;
    for (user, eta) in profiles {
        let lp = g_log_prob(&obs.pi, &obs.sigma, eta, maps, lambda)?;
        if best.is_none_or(|(_, b)| lp > b) {
            best = Some((user, lp));
        }
    }
    Ok(best.expect("at least two profiles").0.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub query_id: String,
    pub item_id: String,
    pub rank_before: usize,
    pub rank_after: usize,
    pub score: f64,
    /// argmax_k η̃_k θ_dk.
    pub dominant_topic: usize,
}

/// Promoted items of re-ranked queries, scored by
/// (σ-rank − π-rank) · η̃'θ_d, best `top_j` first.
pub fn extract_evidence(
    observations: &[QueryObservation],
    eta: &[f64],
    maps: &TopicMaps,
    top_j: usize,
) -> Result<Vec<Evidence>> {
    let mut out = Vec::new();
    for obs in observations.iter().filter(|o| o.is_reranked()) {
        for (pos, item) in obs.pi.items().iter().enumerate() {
            let after = pos + 1;
            let before = obs
                .sigma
                .rank_of(item)
                .ok_or_else(|| LtpError::MismatchedItems(item.clone()))?;
            if after >= before {
                continue;
            }
            let theta = maps
                .get(item)
                .ok_or_else(|| LtpError::MissingTopicMap(item.clone()))?;
            let dominant = (0..theta.len())
                .max_by(|&a, &b| {
                    (eta[a] * theta[a])
                        .total_cmp(&(eta[b] * theta[b]))
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            out.push(Evidence {
                query_id: obs.query_id.clone(),
                item_id: item.clone(),
                rank_before: before,
                rank_after: after,
                score: (before - after) as f64 * dot(eta, theta),
                dominant_topic: dominant,
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.query_id.cmp(&b.query_id))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    out.truncate(top_j);
    Ok(out)
}

/// Shuffles with `seed` and returns (train, test) with `round(frac · m)`
/// observations in train.
pub fn split_observations(
    observations: &[QueryObservation],
    frac: f64,
    seed: u64,
) -> Result<(Vec<QueryObservation>, Vec<QueryObservation>)> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(LtpError::InvalidParameter(format!(
            "split fraction {frac} not in [0, 1]"
        )));
    }
    let mut idx: Vec<usize> = (0..observations.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (frac * observations.len() as f64).round() as usize;
    let pick = |ix: &[usize]| {
        ix.iter()
            .map(|&i| observations[i].clone())
            .collect::<Vec<_>>()
    };
    Ok((pick(&idx[..cut]), pick(&idx[cut..])))
}

/// Seed of repetition `r` of a repeated experiment.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            repeats: 10,
            seed: 0,
        }
    }
}

/// Learns η on the training part of each split and measures disambiguation
/// accuracy on the re-ranked test pairs. Splits without re-ranked test pairs
/// are skipped. With `mixture` the lists are scored under τ̄·g + (1 − τ̄)·f
/// using the learned τ̄ and `params.mu`; otherwise under g alone.
pub fn disambiguation_experiment(
    observations: &[QueryObservation],
    maps: &TopicMaps,
    params: &ModelParams,
    inference: &InferenceOptions,
    split: &SplitConfig,
    mixture: bool,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for r in 0..split.repeats {
        let seed = repeat_seed(split.seed, r);
        let (train, test) = split_observations(observations, split.train_fraction, seed)?;
        let data = Dataset::new(&train, maps)?;
        let state = run_ltp_inf(&data, params, &InferenceOptions { seed, ..*inference })?;
        let tau = state.tau_mean();
        let mut model = Disambiguator::pure(state.eta_tilde, params.lambda);
        if mixture {
            model.mixture = Some((tau, params.mu));
        }
        if let Some(acc) = disambiguation_accuracy(&test, &model, maps, seed)? {
            out.push(acc);
        }
    }
    Ok(out)
}

/// For a group of users, learns each user's η on their training split and
/// classifies every re-ranked test observation of every user. Returns the
/// accuracy of each repetition.
pub fn classification_experiment(
    users: &BTreeMap<String, Vec<QueryObservation>>,
    maps: &TopicMaps,
    params: &ModelParams,
    inference: &InferenceOptions,
    split: &SplitConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for r in 0..split.repeats {
        let seed = repeat_seed(split.seed, r);
        let mut profiles = BTreeMap::new();
        let mut tests = Vec::new();
        for (user, obs) in users {
            let (train, test) = split_observations(obs, split.train_fraction, seed)?;
            let data = Dataset::new(&train, maps)?;
            let state = run_ltp_inf(&data, params, &InferenceOptions { seed, ..*inference })?;
            profiles.insert(user.clone(), state.eta_tilde);
            tests.extend(
                test.into_iter()
                    .filter(|o| o.is_reranked())
                    .map(|o| (user.clone(), o)),
            );
        }
        if tests.is_empty() {
            continue;
        }
        let correct: Vec<bool> = tests
            .par_iter()
            .map(|(user, o)| Ok(classify_user(o, &profiles, maps, params.lambda)? == *user))
            .collect::<Result<_>>()?;
        out.push(correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub profile_id: Option<String>,
    pub personalized_topics: Vec<usize>,
    pub ranked_topics: Vec<usize>,
    pub metrics: RetrievalMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disambiguation_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification_accuracy: Option<f64>,
    pub evidence: Vec<Evidence>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "# Personalization report\n");
        if let Some(id) = &self.profile_id {
            let _ = writeln!(s, "Profile: `{id}`\n");
        }
        let _ = writeln!(
            s,
            "True personalized topics: {:?}\n",
            self.personalized_topics
        );
        let top: Vec<usize> = self.ranked_topics.iter().take(10).copied().collect();
        let _ = writeln!(s, "Top inferred topics: {top:?}\n");
        let _ = writeln!(s, "## Topic recovery (%)\n");
        let _ = writeln!(s, "| P@1 | P@3 | P@5 | R-pre | P@+1 | P@+3 | MAP |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            pct(m.p_at[&1]),
            pct(m.p_at[&3]),
            pct(m.p_at[&5]),
            pct(m.r_precision),
            pct(m.p_plus[&1]),
            pct(m.p_plus[&3]),
            pct(m.average_precision)
        );
        if let Some(a) = self.disambiguation_accuracy {
            let _ = writeln!(s, "Disambiguation accuracy: {}%\n", pct(a));
        }
        if let Some(a) = self.classification_accuracy {
            let _ = writeln!(s, "Classification accuracy: {}%\n", pct(a));
        }
        if !self.evidence.is_empty() {
            let _ = writeln!(s, "## Evidence\n");
            let _ = writeln!(s, "| query | item | before | after | topic | score |");
            let _ = writeln!(s, "|---|---|---|---|---|---|");
            for e in &self.evidence {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {:.3} |",
                    e.query_id, e.item_id, e.rank_before, e.rank_after, e.dominant_topic, e.score
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Just, Strategy};

    fn perm(xs: &[&str]) -> Permutation {
        Permutation::new(xs.iter().copied()).unwrap()
    }

    #[test]
    fn topic_ranking() {
        assert_eq!(rank_topics(&[0.0, 2.0, 1.0]), vec![1, 2, 0]);
        assert_eq!(rank_topics(&[0.5, 0.5, 0.5]), vec![0, 1, 2]);
        assert_eq!(rank_topics(&[-3.0]), vec![0]);
    }

    #[test]
    fn worked_retrieval_example() {
        // A = 0, B = 1, C = 2; ranking A, C, B; relevant {A, B}.
        let m = retrieval_metrics(&[0, 2, 1], &[0, 1]).unwrap();
        assert_eq!(m.r_precision, 0.5);
        assert_eq!(m.average_precision, (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(m.p_at[&1], 1.0);
        assert!(retrieval_metrics(&[0, 1], &[]).is_err());
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let m = retrieval_metrics(&[3, 1, 4, 0, 2, 5, 6, 7, 8], &[1, 3, 4]).unwrap();
        assert_eq!(m.r_precision, 1.0);
        assert_eq!(m.average_precision, 1.0);
        assert_eq!(m.p_at[&1], 1.0);
        assert_eq!(m.p_at[&3], 1.0);
    }

    fn brute_force(ranked: &[usize], rel: &[usize]) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let is_rel = |t: &usize| rel.contains(t);
        let prec = |k: usize| {
            let k = k.min(ranked.len());
            let mut c = 0;
            for t in &ranked[..k] {
                if is_rel(t) {
                    c += 1;
                }
            }
            c as f64 / k as f64
        };
        let mut ap = 0.0;
        for k in 1..=ranked.len() {
            if is_rel(&ranked[k - 1]) {
                ap += prec(k);
            }
        }
        (
            vec![prec(1), prec(3), prec(5)],
            vec![prec(rel.len() + 1), prec(rel.len() + 3)],
            prec(rel.len()),
            ap / rel.len() as f64,
        )
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let t = rng.random_range(5..30usize);
            let mut ranked: Vec<usize> = (0..t).collect();
            ranked.shuffle(&mut rng);
            let k = rng.random_range(1..=t.min(6));
            let mut rel: Vec<usize> = (0..t).collect();
            rel.shuffle(&mut rng);
            rel.truncate(k);
            let m = retrieval_metrics(&ranked, &rel).unwrap();
            let (p, pp, rp, ap) = brute_force(&ranked, &rel);
            assert_eq!(vec![m.p_at[&1], m.p_at[&3], m.p_at[&5]], p);
            assert_eq!(vec![m.p_plus[&1], m.p_plus[&3]], pp);
            assert_eq!(m.r_precision, rp);
            assert!((m.average_precision - ap).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metrics_lie_in_unit_interval(perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(), k in 1usize..12) {
            let rel: Vec<usize> = (0..k).collect();
            let m = retrieval_metrics(&perm, &rel).unwrap();
            for v in m.p_at.values().chain(m.p_plus.values()).chain([&m.r_precision, &m.average_precision]) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            for p in &m.pr_curve {
                prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
            }
            let separated = perm.iter().take(k).all(|t| *t < k);
            prop_assert_eq!(m.average_precision == 1.0, separated);
        }
    }

    fn three_maps() -> TopicMaps {
        let mut maps = TopicMaps::new(2);
        maps.insert("a", &[1.0, 0.0]).unwrap();
        maps.insert("b", &[0.5, 0.5]).unwrap();
        maps.insert("c", &[0.0, 1.0]).unwrap();
        maps
    }

    #[test]
    fn disambiguation_follows_the_scores() {
        let maps = three_maps();
        let eta = [4.0, -4.0];
        let l1 = perm(&["a", "b", "c"]);
        let l2 = perm(&["c", "b", "a"]);
        assert_eq!(
            disambiguate(&l1, &l2, &eta, &maps, 0.9).unwrap(),
            Label::FirstPersonalized
        );
        assert_eq!(
            disambiguate(&l2, &l1, &eta, &maps, 0.9).unwrap(),
            Label::FirstVanilla
        );
        assert_eq!(
            disambiguate(&l1, &l1, &eta, &maps, 0.9).unwrap(),
            Label::FirstVanilla
        );
        let mix = Disambiguator {
            eta: eta.to_vec(),
            lambda: 0.9,
            mixture: Some((0.7, 10.0)),
        };
        assert_eq!(
            mix.decide(&l1, &l2, &maps).unwrap(),
            Label::FirstPersonalized
        );
    }

    #[test]
    fn zero_eta_is_a_coin_flip() {
        let mut maps = TopicMaps::new(2);
        let ids: Vec<String> = (0..6).map(|i| format!("x{i}")).collect();
        for id in &ids {
            maps.insert(id.clone(), &[0.5, 0.5]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs: Vec<QueryObservation> = (0..10_000)
            .map(|q| {
                let mut a = ids.clone();
                a.shuffle(&mut rng);
                let mut b = ids.clone();
                while b == a {
                    b.shuffle(&mut rng);
                }
                QueryObservation::new(
                    format!("q{q}"),
                    Permutation::new(a).unwrap(),
                    Permutation::new(b).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let acc =
            disambiguation_accuracy(&obs, &Disambiguator::pure(vec![0.0, 0.0], 0.9), &maps, 3)
                .unwrap()
                .unwrap();
        assert!((acc - 0.5).abs() < 0.03, "{acc}");
    }

    #[test]
    fn classification_picks_the_matching_user() {
        let maps = three_maps();
        let obs =
            QueryObservation::new("q", perm(&["a", "b", "c"]), perm(&["c", "b", "a"])).unwrap();
        let mut profiles = BTreeMap::new();
        profiles.insert("u1".to_string(), vec![3.0, 0.0]);
        profiles.insert("u2".to_string(), vec![0.0, 3.0]);
        assert_eq!(classify_user(&obs, &profiles, &maps, 0.9).unwrap(), "u2");
        profiles.insert("u2".to_string(), vec![3.0, 0.0]);
        assert_eq!(classify_user(&obs, &profiles, &maps, 0.9).unwrap(), "u1");
        profiles.remove("u2");
        assert!(classify_user(&obs, &profiles, &maps, 0.9).is_err());
    }

    #[test]
    fn evidence_prefers_large_moves_on_strong_topics() {
        let mut maps = TopicMaps::new(2);
        for (id, th) in [
            ("a", [0.0, 1.0]),
            ("b", [0.0, 1.0]),
            ("c", [0.0, 1.0]),
            ("d", [0.0, 1.0]),
            ("e", [1.0, 0.0]),
        ] {
            maps.insert(id, &th).unwrap();
        }
        let eta = [2.0, 0.1];
        let o1 = QueryObservation::new(
            "q1",
            perm(&["a", "b", "c", "d", "e"]),
            perm(&["e", "a", "b", "c", "d"]),
        )
        .unwrap();
        let o2 = QueryObservation::new(
            "q2",
            perm(&["a", "b", "c", "d", "e"]),
            perm(&["b", "a", "c", "d", "e"]),
        )
        .unwrap();
        let ev = extract_evidence(&[o2.clone(), o1], &eta, &maps, 10).unwrap();
        assert_eq!(ev[0].item_id, "e");
        assert_eq!(
            (ev[0].rank_before, ev[0].rank_after, ev[0].dominant_topic),
            (5, 1, 0)
        );
        assert_eq!(ev.len(), 2);
        let same = QueryObservation::new("q3", perm(&["a", "b"]), perm(&["a", "b"])).unwrap();
        assert!(extract_evidence(&[same], &eta, &maps, 10)
            .unwrap()
            .is_empty());
        assert_eq!(extract_evidence(&[o2], &eta, &maps, 0).unwrap().len(), 0);
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let obs: Vec<QueryObservation> = (0..10)
            .map(|q| QueryObservation::new(format!("q{q}"), perm(&["a"]), perm(&["a"])).unwrap())
            .collect();
        let (tr, te) = split_observations(&obs, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, _) = split_observations(&obs, 0.8, 1).unwrap();
        assert_eq!(tr, tr2);
        let mut ids: Vec<String> = tr.iter().chain(&te).map(|o| o.query_id.clone()).collect();
        ids.sort();
        let mut want: Vec<String> = obs.iter().map(|o| o.query_id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
    }

    #[test]
    fn markdown_has_the_metric_table() {
        let report = EvalReport {
            profile_id: Some("p".into()),
            personalized_topics: vec![0],
            ranked_topics: vec![0, 1],
            metrics: retrieval_metrics(&[0, 1], &[0]).unwrap(),
            disambiguation_accuracy: Some(0.7),
            classification_accuracy: None,
            evidence: vec![],
        };
        let md = report.to_markdown();
        assert!(md.contains("| P@1 | P@3 | P@5 | R-pre | P@+1 | P@+3 | MAP |"));
        assert!(md.contains("| 100.00 |"));
        assert!(md.contains("70.00%"));
    }
}
