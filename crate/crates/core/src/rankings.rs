//! Ranked result lists and the alignment of vanilla/personalized pairs.
//!
//! Ranks are 1-based throughout: `item_at(1)` is the top result.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{LtpError, Result};

/// A bijection from ranks `1..=n` onto a set of item ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    items: Vec<String>,
    rank_of: HashMap<String, usize>,
}

impl Permutation {
    pub fn new<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: Vec<String> = items.into_iter().map(Into::into).collect();
        let mut rank_of = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if rank_of.insert(item.clone(), idx + 1).is_some() {
                return Err(LtpError::DuplicateItem(item.clone()));
            }
        }
        Ok(Self { items, rank_of })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Item placed at `rank` (1-based).
    pub fn item_at(&self, rank: usize) -> Option<&str> {
        rank.checked_sub(1)
            .and_then(|i| self.items.get(i))
            .map(String::as_str)
    }

    /// Inverse lookup: the 1-based rank of `item`.
    pub fn rank_of(&self, item: &str) -> Option<usize> {
        self.rank_of.get(item).copied()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.rank_of.contains_key(item)
    }

    /// For each position of `self`, the rank that the same item holds in
    /// `center`, i.e. `center⁻¹(self(i))` for `i = 1..=n`.
    pub fn ranks_in(&self, center: &Permutation) -> Result<Vec<usize>> {
        if self.len() != center.len() {
            let odd = self
                .items
                .iter()
                .find(|d| !center.contains(d))
                .or_else(|| center.items.iter().find(|d| !self.contains(d)))
                .cloned()
                .unwrap_or_default();
            return Err(LtpError::MismatchedItems(odd));
        }
        self.items
            .iter()
            .map(|d| {
                center
                    .rank_of(d)
                    .ok_or_else(|| LtpError::MismatchedItems(d.clone()))
            })
            .collect()
    }
}

/// One query's aligned (vanilla, personalized) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryObservation {
    pub query_id: String,
    /// Vanilla list.
    pub sigma: Permutation,
    /// Personalized list.
    pub pi: Permutation,
}

impl QueryObservation {
    pub fn new(query_id: impl Into<String>, sigma: Permutation, pi: Permutation) -> Result<Self> {
        pi.ranks_in(&sigma)?;
        Ok(Self {
            query_id: query_id.into(),
            sigma,
            pi,
        })
    }

    pub fn from_lists(
        query_id: impl Into<String>,
        vanilla: &[String],
        personalized: &[String],
    ) -> Result<Self> {
        let (sigma, pi) = align_lists(vanilla, personalized)?;
        Ok(Self {
            query_id: query_id.into(),
            sigma,
            pi,
        })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn is_reranked(&self) -> bool {
        self.pi.items() != self.sigma.items()
    }
}

/// Line record of `observations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub query_id: String,
    pub vanilla: Vec<String>,
    pub personalized: Vec<String>,
}

impl ObservationRecord {
    pub fn into_observation(self) -> Result<QueryObservation> {
        QueryObservation::from_lists(self.query_id, &self.vanilla, &self.personalized)
    }
}

impl From<&QueryObservation> for ObservationRecord {
    fn from(obs: &QueryObservation) -> Self {
        Self {
            query_id: obs.query_id.clone(),
            vanilla: obs.sigma.items().to_vec(),
            personalized: obs.pi.items().to_vec(),
        }
    }
}

fn check_unique(list: &[String]) -> Result<HashSet<&str>> {
    let mut seen = HashSet::with_capacity(list.len());
    for item in list {
        if !seen.insert(item.as_str()) {
            return Err(LtpError::DuplicateItem(item.clone()));
        }
    }
    Ok(seen)
}

/// Brings two result lists onto a common item set: items present in only
/// one list are appended, in their original relative order, to the end of
/// the other. Returns `(sigma, pi)`.
pub fn align_lists(
    vanilla: &[String],
    personalized: &[String],
) -> Result<(Permutation, Permutation)> {
    let in_vanilla = check_unique(vanilla)?;
    let in_personalized = check_unique(personalized)?;
    if vanilla.is_empty() && personalized.is_empty() {
        return Err(LtpError::EmptyObservation);
    }

    let sigma = vanilla
        .iter()
        .chain(
            personalized
                .iter()
                .filter(|d| !in_vanilla.contains(d.as_str())),
        )
        .cloned();
    let pi = personalized
        .iter()
        .chain(
            vanilla
                .iter()
                .filter(|d| !in_personalized.contains(d.as_str())),
        )
        .cloned();
    Ok((Permutation::new(sigma)?, Permutation::new(pi)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplacementStats {
    /// Σ_d |σ⁻¹(d) − π⁻¹(d)|.
    pub total_displacement: usize,
    /// Largest single-item rank shift.
    pub max_shift: usize,
    pub is_reranked: bool,
    /// Number of discordant item pairs.
    pub kendall_tau_distance: usize,
}

pub fn displacement_stats(obs: &QueryObservation) -> DisplacementStats {
    // π-position → σ-rank; alignment guarantees the lookup succeeds.
    let sigma_ranks: Vec<usize> = obs
        .pi
        .items()
        .iter()
        .map(|d| obs.sigma.rank_of(d).expect("aligned observation"))
        .collect();

    let mut total = 0;
    let mut max_shift = 0;
    for (pos, &r) in sigma_ranks.iter().enumerate() {
        let shift = (pos + 1).abs_diff(r);
        total += shift;
        max_shift = max_shift.max(shift);
    }

    let mut discordant = 0;
    for i in 0..sigma_ranks.len() {
        for j in i + 1..sigma_ranks.len() {
            if sigma_ranks[i] > sigma_ranks[j] {
                discordant += 1;
            }
        }
    }

    DisplacementStats {
        total_displacement: total,
        max_shift,
        is_reranked: total > 0,
        kendall_tau_distance: discordant,
    }
}
