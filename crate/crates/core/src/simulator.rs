//! Synthetic ground truth: a topic world, queries with vanilla rankings,
//! user profiles with known personalized topics, and personalized rankings.
//!
//! Two personalizers are provided. [`personalize_generative`] draws exactly
//! from the LTP generative model and is the oracle for recovery tests.
//! [`personalize_deterministic`] promotes items that carry enough weight on a
//! personalized topic, which the model does not describe exactly.
//!
//! Seeds are split as follows: a master `ChaCha8Rng` seeded with the caller's
//! seed draws one sub-seed per purpose (world, queries, profile,
//! personalization). Per-query randomness uses the purpose seed with the
//! query's index as the ChaCha stream, so queries can be generated in any
//! order or in parallel without changing the output.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LtpError, Result};
use crate::perm_models::{sample_f, sample_g};
use crate::rankings::{Permutation, QueryObservation};
use crate::topic_model::{TopicMaps, TopicModel, DEFAULT_ALPHA};

/// Smoothing inside the relevance log-likelihood so unrelated items stay
/// finite.
const RELEVANCE_FLOOR: f64 = 1e-12;
/// Weight on a personalized topic above which the deterministic personalizer
/// promotes an item.
pub const PROMOTION_THRESHOLD: f64 = 0.2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_topics: usize,
    /// Topics are grouped into this many contiguous categories; secondary
    /// topics of an item tend to share the primary's category.
    pub num_categories: usize,
    pub vocab_size: usize,
    pub items_per_topic: usize,
    pub nu: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a secondary topic is drawn from the primary's
    /// category rather than uniformly.
    pub same_category_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_topics: 50,
            num_categories: 10,
            vocab_size: 2000,
            items_per_topic: 6,
            nu: 0.01,
            min_tokens: 50,
            max_tokens: 200,
            same_category_prob: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub primary_topic: usize,
    pub theta: Vec<f64>,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct World {
    pub model: TopicModel,
    pub items: Vec<Item>,
    pub maps: TopicMaps,
    /// Category of every topic.
    pub categories: Vec<usize>,
}

/// Draws from a symmetric Dirichlet. Gamma variates with tiny shape underflow
/// to zero, so they are drawn in log space: Gamma(a) = Gamma(a + 1) · U^{1/a}.
fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let gamma = rand_distr::Gamma::new(alpha + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            gamma.sample(rng).ln() + u.ln() / alpha
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

fn word_name(w: usize) -> String {
    format!("w{w:04}")
}

pub fn gen_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    let t = cfg.num_topics;
    if t < 2 {
        return Err(LtpError::InvalidParameter(
            "the simulator needs at least two topics".into(),
        ));
    }
    if cfg.num_categories == 0 || cfg.num_categories > t {
        return Err(LtpError::InvalidParameter(
            "categories must be between 1 and the topic count".into(),
        ));
    }
    if cfg.vocab_size < 10
        || cfg.items_per_topic == 0
        || cfg.min_tokens == 0
        || cfg.min_tokens > cfg.max_tokens
    {
        return Err(LtpError::InvalidParameter(
            "degenerate world configuration".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..cfg.vocab_size).map(word_name).collect();
    let beta: Vec<Vec<f64>> = (0..t)
        .map(|_| sample_dirichlet(cfg.nu, cfg.vocab_size, &mut rng))
        .collect();
    let categories: Vec<usize> = (0..t).map(|k| k * cfg.num_categories / t).collect();

    let mut thetas = Vec::with_capacity(t * cfg.items_per_topic);
    for primary in 0..t {
        let siblings: Vec<usize> = (0..t)
            .filter(|&k| k != primary && categories[k] == categories[primary])
            .collect();
        for _ in 0..cfg.items_per_topic {
            let mut theta = vec![0.0; t];
            let secondary_count = rng.random_range(0..=2usize);
            let mut secondaries: Vec<usize> = Vec::new();
            while secondaries.len() < secondary_count {
                let k = if !siblings.is_empty() && rng.random::<f64>() < cfg.same_category_prob {
                    siblings[rng.random_range(0..siblings.len())]
                } else {
                    rng.random_range(0..t)
                };
                if k != primary && !secondaries.contains(&k) {
                    secondaries.push(k);
                }
            }
            if secondaries.is_empty() {
                theta[primary] = 1.0;
            } else {
                let p: f64 = rng.random_range(0.5..0.9);
                theta[primary] = p;
                let split = sample_dirichlet(1.0, secondaries.len(), &mut rng);
                for (k, s) in secondaries.iter().zip(split) {
                    theta[*k] = (1.0 - p) * s;
                }
            }
            thetas.push((primary, theta));
        }
    }

    // Token generation is independent per item.
    let word_dists: Vec<WeightedAliasIndex<f64>> = beta
        .iter()
        .map(|row| WeightedAliasIndex::new(row.clone()).expect("valid topic row"))
        .collect();
    let text_seed: u64 = rng.random();
    let items: Vec<Item> = thetas
        .into_par_iter()
        .enumerate()
        .map(|(idx, (primary, theta))| {
            let mut rng = rng_for(text_seed, idx as u64);
            let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            let topic_dist = WeightedAliasIndex::new(theta.clone()).expect("valid theta");
            let words: Vec<&str> = (0..len)
                .map(|_| vocab[word_dists[topic_dist.sample(&mut rng)].sample(&mut rng)].as_str())
                .collect();
            Item {
                item_id: format!("d{idx:05}"),
                primary_topic: primary,
                theta,
                text: words.join(" "),
            }
        })
        .collect();

    let mut maps = TopicMaps::new(t);
    for item in &items {
        maps.insert(item.item_id.clone(), &item.theta)?;
    }
    Ok(World {
        model: TopicModel {
            num_topics: t,
            vocab,
            beta,
            nu: cfg.nu,
            alpha: DEFAULT_ALPHA,
        },
        items,
        maps,
        categories,
    })
}

#[derive(Debug, Clone)]
pub struct Query {
    pub query_id: String,
    pub topic: usize,
    pub words: Vec<String>,
    /// Relevance of every world item, aligned with `World::items`.
    pub relevance: Vec<f64>,
}

/// Log-likelihood of the query words under every item's topic mixture.
fn relevance(world: &World, word_ids: &[usize]) -> Vec<f64> {
    world
        .items
        .iter()
        .map(|item| {
            word_ids
                .iter()
                .map(|&w| {
                    let p: f64 = item
                        .theta
                        .iter()
                        .zip(&world.model.beta)
                        .filter(|(th, _)| **th > 0.0)
                        .map(|(th, row)| th * row[w])
                        .sum();
                    (p + RELEVANCE_FLOOR).ln()
                })
                .sum()
        })
        .collect()
}

/// `count` queries of 2 to 4 distinct words from the topic's ten most
/// probable words. `first_index` numbers the queries and selects their
/// random streams.
pub fn gen_queries(
    world: &World,
    topic: usize,
    count: usize,
    first_index: usize,
    seed: u64,
) -> Result<Vec<Query>> {
    if topic >= world.model.num_topics {
        return Err(LtpError::InvalidParameter(format!(
            "topic {topic} out of range"
        )));
    }
    let top = world.model.top_words(topic, 10);
    Ok((first_index..first_index + count)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng_for(seed, idx as u64);
            let len = rng.random_range(2..=4usize).min(top.len());
            let picks: Vec<usize> = sample(&mut rng, top.len(), len)
                .into_iter()
                .map(|i| top[i])
                .collect();
            Query {
                query_id: format!("q{idx:05}"),
                topic,
                words: picks
                    .iter()
                    .map(|&w| world.model.vocab[w].clone())
                    .collect(),
                relevance: relevance(world, &picks),
            }
        })
        .collect())
}

/// Top `n` items by relevance, ties broken by item id.
pub fn gen_vanilla(relevance: &[f64], item_ids: &[String], n: usize) -> Result<Permutation> {
    if n > item_ids.len() || relevance.len() != item_ids.len() {
        return Err(LtpError::InvalidParameter(
            "list length exceeds the item count".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..item_ids.len()).collect();
    idx.sort_by(|&a, &b| {
        relevance[b]
            .total_cmp(&relevance[a])
            .then_with(|| item_ids[a].cmp(&item_ids[b]))
    });
    Permutation::new(idx[..n].iter().map(|&i| item_ids[i].clone()))
}

/// A query with its vanilla ranking; the personalized side is added per user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanillaQuery {
    pub query_id: String,
    pub topic: usize,
    pub words: Vec<String>,
    pub sigma: Vec<String>,
}

/// Generates `queries_per_topic` queries for every topic, assigned
/// round-robin over topics, with their vanilla top-`list_len` lists.
pub fn gen_query_set(
    world: &World,
    queries_per_topic: usize,
    list_len: usize,
    seed: u64,
) -> Result<Vec<VanillaQuery>> {
    let t = world.model.num_topics;
    let ids: Vec<String> = world.items.iter().map(|i| i.item_id.clone()).collect();
    let mut out = Vec::with_capacity(t * queries_per_topic);
    for round in 0..queries_per_topic {
        for topic in 0..t {
            let index = round * t + topic;
            let q = gen_queries(world, topic, 1, index, seed)?.remove(0);
            let sigma = gen_vanilla(&q.relevance, &ids, list_len)?;
            out.push(VanillaQuery {
                query_id: q.query_id,
                topic,
                words: q.words,
                sigma: sigma.items().to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub profile_id: String,
    /// Sorted ascending.
    pub personalized_topics: Vec<usize>,
    pub eta_true: Vec<f64>,
    pub tau_true: f64,
    /// Whether each query was topically personalized. For the deterministic
    /// personalizer this records whether the list was re-ranked.
    #[serde(default)]
    pub z_true: BTreeMap<String, bool>,
}

pub fn gen_profile(
    num_topics: usize,
    k: usize,
    magnitude: f64,
    tau: f64,
    seed: u64,
) -> Result<SyntheticProfile> {
    if k == 0 || k > num_topics {
        return Err(LtpError::InvalidParameter(format!(
            "cannot personalize {k} of {num_topics} topics"
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(LtpError::InvalidParameter("tau must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topics = sample(&mut rng, num_topics, k).into_vec();
    topics.sort_unstable();
    let mut eta = vec![0.0; num_topics];
    for &k in &topics {
        eta[k] = magnitude;
    }
    Ok(SyntheticProfile {
        profile_id: format!("profile-{seed}"),
        personalized_topics: topics,
        eta_true: eta,
        tau_true: tau,
        z_true: BTreeMap::new(),
    })
}

/// One draw of the generative model: z ~ Bernoulli(τ), then π ~ g if z = 1
/// and π ~ f otherwise.
pub fn personalize_generative<R: Rng + ?Sized>(
    sigma: &Permutation,
    profile: &SyntheticProfile,
    maps: &TopicMaps,
    lambda: f64,
    mu: f64,
    rng: &mut R,
) -> Result<(Permutation, bool)> {
    let z = rng.random::<f64>() < profile.tau_true;
    let pi = if z {
        sample_g(sigma, &profile.eta_true, maps, lambda, rng)?
    } else {
        sample_f(sigma, mu, rng)
    };
    Ok((pi, z))
}

/// Stable partition of σ: items with more than [`PROMOTION_THRESHOLD`] weight
/// on any personalized topic move to the front.
pub fn personalize_deterministic(
    sigma: &Permutation,
    profile: &SyntheticProfile,
    maps: &TopicMaps,
) -> Result<Permutation> {
    let mut front = Vec::new();
    let mut back = Vec::new();
    for d in sigma.items() {
        let theta = maps
            .get(d)
            .ok_or_else(|| LtpError::MissingTopicMap(d.clone()))?;
        if profile
            .personalized_topics
            .iter()
            .any(|&k| theta[k] > PROMOTION_THRESHOLD)
        {
            front.push(d.clone());
        } else {
            back.push(d.clone());
        }
    }
    front.extend(back);
    Permutation::new(front)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Personalizer {
    Generative { lambda: f64, mu: f64 },
    Deterministic,
}

/// Personalizes every vanilla query for one profile and records `z_true`.
pub fn personalize_queries(
    queries: &[VanillaQuery],
    profile: &mut SyntheticProfile,
    maps: &TopicMaps,
    personalizer: Personalizer,
    seed: u64,
) -> Result<Vec<QueryObservation>> {
    let drawn: Vec<(QueryObservation, bool)> = queries
        .par_iter()
        .enumerate()
        .map(|(idx, q)| {
            let sigma = Permutation::new(q.sigma.iter().cloned())?;
            let (pi, z) = match personalizer {
                Personalizer::Generative { lambda, mu } => {
                    let mut rng = rng_for(seed, idx as u64);
                    personalize_generative(&sigma, profile, maps, lambda, mu, &mut rng)?
                }
                Personalizer::Deterministic => {
                    let pi = personalize_deterministic(&sigma, profile, maps)?;
                    let moved = pi != sigma;
                    (pi, moved)
                }
            };
            Ok((QueryObservation::new(q.query_id.clone(), sigma, pi)?, z))
        })
        .collect::<Result<_>>()?;
    profile.z_true = drawn
        .iter()
        .map(|(o, z)| (o.query_id.clone(), *z))
        .collect();
    Ok(drawn.into_iter().map(|(o, _)| o).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub queries_per_topic: usize,
    pub list_len: usize,
    pub personalized_topics: usize,
    pub eta_magnitude: f64,
    pub tau: f64,
    pub personalizer: Personalizer,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            queries_per_topic: 10,
            list_len: 10,
            personalized_topics: 3,
            eta_magnitude: 2.0,
            tau: 0.7,
            personalizer: Personalizer::Generative {
                lambda: 0.9,
                mu: 10.0,
            },
        }
    }
}

/// Everything generated for one synthetic user.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: World,
    pub queries: Vec<VanillaQuery>,
    pub profile: SyntheticProfile,
    pub observations: Vec<QueryObservation>,
}

/// Seeds for the individual stages, drawn from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct StageSeeds {
    pub world: u64,
    pub queries: u64,
    pub profile: u64,
    pub personalize: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            world: rng.random(),
            queries: rng.random(),
            profile: rng.random(),
            personalize: rng.random(),
        }
    }
}

pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    let seeds = StageSeeds::from_master(seed);
    let world = gen_world(&cfg.world, seeds.world)?;
    let queries = gen_query_set(&world, cfg.queries_per_topic, cfg.list_len, seeds.queries)?;
    let mut profile = gen_profile(
        cfg.world.num_topics,
        cfg.personalized_topics,
        cfg.eta_magnitude,
        cfg.tau,
        seeds.profile,
    )?;
    let observations = personalize_queries(
        &queries,
        &mut profile,
        &world.maps,
        cfg.personalizer,
        seeds.personalize,
    )?;
    Ok(Scenario {
        world,
        queries,
        profile,
        observations,
    })
}
