//! Stage-wise permutation distributions around a central ranking.
//!
//! Both models build π one rank at a time. At stage `i` every item `d` not
//! yet placed gets log-weight `base(d) + w·(i − σ⁻¹(d))`:
//!
//! * `f` (distance only): `base = 0`, `w = μ`;
//! * `g` (scores and distance): `base = λ·η'θ_d`, `w = 1 − λ`.
//!
//! The expected log-probability of `g` under a Gaussian `η ~ N(η̃, γ²I)` is
//! bounded from below with one auxiliary parameter ζ per stage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LtpError, Result};
use crate::rankings::Permutation;
use crate::topic_model::TopicMaps;

pub const MU_MAX: f64 = 50.0;
pub const MU_MIN: f64 = 1e-3;

/// Parameters of the personalization block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Spread of `f`.
    pub mu: f64,
    /// Weight of the scores against the central ranking in `g`.
    pub lambda: f64,
    /// Prior (and variational) standard deviation of η.
    pub gamma: f64,
    /// Symmetric Beta prior parameter of the personalization rate.
    pub delta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            mu: 10.0,
            lambda: 0.9,
            gamma: 1.0,
            delta: 2.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return Err(LtpError::InvalidParameter(format!(
                "lambda {} not in [0, 1]",
                self.lambda
            )));
        }
        if !(self.mu > 0.0 && self.mu <= MU_MAX) {
            return Err(LtpError::InvalidParameter(format!(
                "mu {} not in (0, {MU_MAX}]",
                self.mu
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LtpError::InvalidParameter(format!(
                "gamma {} must be positive",
                self.gamma
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(LtpError::InvalidParameter(format!(
                "delta {} must be positive",
                self.delta
            )));
        }
        Ok(())
    }
}

/// A user's topic-level personalization vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonalizationVector(pub Vec<f64>);

impl PersonalizationVector {
    pub fn new(eta: Vec<f64>, num_topics: usize) -> Result<Self> {
        if eta.len() != num_topics {
            return Err(LtpError::TopicCountMismatch {
                expected: num_topics,
                found: eta.len(),
            });
        }
        if eta.iter().any(|x| !x.is_finite()) {
            return Err(LtpError::NonFinite("personalization vector".into()));
        }
        Ok(Self(eta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log(e^a + e^b) without overflow.
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A (π, σ) pair reduced to what the stage-wise models need: for each
/// position of π, the item's 1-based rank in σ and its topic-map row.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    center_ranks: Vec<f64>,
    rows: Vec<usize>,
}

impl PreparedPair {
    pub fn new(pi: &Permutation, sigma: &Permutation, maps: &TopicMaps) -> Result<Self> {
        let center_ranks = pi.ranks_in(sigma)?.into_iter().map(|r| r as f64).collect();
        let rows = pi
            .items()
            .iter()
            .map(|d| {
                maps.index_of(d)
                    .ok_or_else(|| LtpError::MissingTopicMap(d.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { center_ranks, rows })
    }

    /// A pair for the distance-only model; no topic-maps attached.
    pub fn distance_only(pi: &Permutation, sigma: &Permutation) -> Result<Self> {
        let center_ranks = pi.ranks_in(sigma)?.into_iter().map(|r| r as f64).collect();
        Ok(Self {
            center_ranks,
            rows: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.center_ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_ranks.is_empty()
    }

    /// Topic-map rows in π order.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn center_ranks(&self) -> &[f64] {
        &self.center_ranks
    }

    /// Σ_i [ base_i + w(i − r_i) − log Σ_{j≥i} exp(base_j + w(i − r_j)) ].
    ///
    /// The `w·i` term is shared by every item of stage `i`, so it cancels and
    /// a single reverse pass of log-sum-exp over `base_j − w·r_j` suffices.
    pub fn stagewise_log_prob(&self, base: &[f64], w: f64) -> f64 {
        let mut suffix = f64::NEG_INFINITY;
        let mut total = 0.0;
        for i in (0..self.len()).rev() {
            let u = base[i] - w * self.center_ranks[i];
            suffix = log_add_exp(suffix, u);
            total += u - suffix;
        }
        total
    }

    pub fn log_f(&self, mu: f64) -> f64 {
        let zeros = vec![0.0; self.len()];
        self.stagewise_log_prob(&zeros, mu)
    }

    /// `scores` are per topic-map row (η'θ for every row of the table).
    pub fn log_g(&self, row_scores: &[f64], lambda: f64) -> f64 {
        let base: Vec<f64> = self.rows.iter().map(|&r| lambda * row_scores[r]).collect();
        self.stagewise_log_prob(&base, 1.0 - lambda)
    }

    fn bound_bases(&self, bound: &BoundRows<'_>) -> (Vec<f64>, Vec<f64>) {
        let lam = bound.lambda;
        let var = 0.5 * lam * lam * bound.gamma * bound.gamma;
        let linear: Vec<f64> = self.rows.iter().map(|&r| lam * bound.scores[r]).collect();
        let exponent: Vec<f64> = self
            .rows
            .iter()
            .zip(&linear)
            .map(|(&r, l)| l + var * bound.sq_norms[r])
            .collect();
        (linear, exponent)
    }

    /// ln ζ_i at the optimum: ln Σ_{j≥i} M_j(i).
    pub fn optimal_log_zeta(&self, bound: &BoundRows<'_>) -> Vec<f64> {
        let (_, exponent) = self.bound_bases(bound);
        let w = 1.0 - bound.lambda;
        let n = self.len();
        let mut out = vec![0.0; n];
        let mut suffix = f64::NEG_INFINITY;
        for i in (0..n).rev() {
            suffix = log_add_exp(suffix, exponent[i] - w * self.center_ranks[i]);
            out[i] = suffix + w * (i + 1) as f64;
        }
        out
    }

    /// Lower bound on E[ln g] at the given ln ζ.
    pub fn expected_log_g_bound(&self, bound: &BoundRows<'_>, log_zeta: &[f64]) -> f64 {
        let (linear, exponent) = self.bound_bases(bound);
        let w = 1.0 - bound.lambda;
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            let stage = (i + 1) as f64;
            let mut ratio = 0.0;
            for j in i..n {
                ratio += (exponent[j] + w * (stage - self.center_ranks[j]) - log_zeta[i]).exp();
            }
            total += linear[i] + w * (stage - self.center_ranks[i]) - ratio - log_zeta[i] + 1.0;
        }
        total
    }

    /// The bound with ζ at its optimum, which equals
    /// Σ_i [ λη̃'θ_{π(i)} + w(i − r_i) − ln Σ_{j≥i} M_j(i) ].
    pub fn profiled_bound(&self, bound: &BoundRows<'_>) -> f64 {
        let (linear, exponent) = self.bound_bases(bound);
        let w = 1.0 - bound.lambda;
        let mut suffix = f64::NEG_INFINITY;
        let mut total = 0.0;
        for i in (0..self.len()).rev() {
            suffix = log_add_exp(suffix, exponent[i] - w * self.center_ranks[i]);
            total += linear[i] - w * self.center_ranks[i] - suffix;
        }
        total
    }

    /// Per-position coefficients `c_j` such that the η̃-gradient of the bound
    /// at fixed ζ is Σ_j c_j θ_{π(j)}.
    pub fn bound_grad_coefficients(&self, bound: &BoundRows<'_>, log_zeta: &[f64]) -> Vec<f64> {
        let (_, exponent) = self.bound_bases(bound);
        let lam = bound.lambda;
        let w = 1.0 - lam;
        let n = self.len();
        let mut coef = vec![lam; n];
        for i in 0..n {
            let stage = (i + 1) as f64;
            for j in i..n {
                let m = (exponent[j] + w * (stage - self.center_ranks[j]) - log_zeta[i]).exp();
                coef[j] -= lam * m;
            }
        }
        coef
    }
}

/// Per-row quantities shared by every pair when evaluating the E[ln g] bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundRows<'a> {
    /// η̃'θ for every topic-map row.
    pub scores: &'a [f64],
    /// ‖θ‖² for every topic-map row.
    pub sq_norms: &'a [f64],
    pub lambda: f64,
    pub gamma: f64,
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(LtpError::InvalidParameter(format!(
            "mu {mu} must be a nonnegative real"
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LtpError::InvalidParameter(format!(
            "lambda {lambda} not in [0, 1]"
        )));
    }
    Ok(())
}

fn item_scores(pi: &Permutation, eta: &[f64], maps: &TopicMaps) -> Result<Vec<f64>> {
    if eta.len() != maps.num_topics() {
        return Err(LtpError::TopicCountMismatch {
            expected: maps.num_topics(),
            found: eta.len(),
        });
    }
    pi.items()
        .iter()
        .map(|d| {
            maps.get(d)
                .map(|theta| dot(eta, theta))
                .ok_or_else(|| LtpError::MissingTopicMap(d.clone()))
        })
        .collect()
}

/// ln f(π | σ, μ).
pub fn f_log_prob(pi: &Permutation, sigma: &Permutation, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(PreparedPair::distance_only(pi, sigma)?.log_f(mu))
}

/// Unnormalized stage weights of `f` exactly as each stage sees them:
/// `exp(μ(i − σ⁻¹(d)))` for every item `d` still available at stage `i`,
/// listed in σ order.
pub fn f_stage_weights(
    pi: &Permutation,
    sigma: &Permutation,
    mu: f64,
) -> Result<Vec<Vec<(String, f64)>>> {
    check_mu(mu)?;
    pi.ranks_in(sigma)?;
    let mut remaining: Vec<&str> = sigma.items().iter().map(String::as_str).collect();
    let mut stages = Vec::with_capacity(pi.len());
    for (i, chosen) in pi.items().iter().enumerate() {
        let stage = (i + 1) as f64;
        let row = remaining
            .iter()
            .map(|d| {
                let r = sigma.rank_of(d).expect("checked") as f64;
                (d.to_string(), (mu * (stage - r)).exp())
            })
            .collect();
        stages.push(row);
        remaining.retain(|d| d != chosen);
    }
    Ok(stages)
}

/// ln g(π | η; σ, λ, θ).
pub fn g_log_prob(
    pi: &Permutation,
    sigma: &Permutation,
    eta: &[f64],
    maps: &TopicMaps,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let scores = item_scores(pi, eta, maps)?;
    let pair = PreparedPair::distance_only(pi, sigma)?;
    let base: Vec<f64> = scores.iter().map(|s| lambda * s).collect();
    Ok(pair.stagewise_log_prob(&base, 1.0 - lambda))
}

/// Draws a ranking stage by stage: at stage `i` each remaining item `d` is
/// picked with probability ∝ exp(base(d) + w(i − σ⁻¹(d))).
fn sample_stagewise<R: Rng + ?Sized>(
    sigma: &Permutation,
    base: &[f64],
    w: f64,
    rng: &mut R,
) -> Permutation {
    let n = sigma.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for stage in 1..=n {
        weights.clear();
        weights.extend(
            remaining
                .iter()
                .map(|&idx| base[idx] + w * (stage as f64 - (idx + 1) as f64)),
        );
        let m = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in weights.iter_mut() {
            *x = (*x - m).exp();
            total += *x;
        }
        debug_assert!(
            (weights.iter().map(|x| x / total).sum::<f64>() - 1.0).abs() < 1e-12,
            "stage weights must sum to one"
        );
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (slot, x) in weights.iter().enumerate() {
            if u < *x {
                pick = slot;
                break;
            }
            u -= x;
        }
        order.push(remaining.remove(pick));
    }
    Permutation::new(order.into_iter().map(|idx| sigma.items()[idx].clone()))
        .expect("reordering of a permutation")
}

pub fn sample_f<R: Rng + ?Sized>(sigma: &Permutation, mu: f64, rng: &mut R) -> Permutation {
    let base = vec![0.0; sigma.len()];
    sample_stagewise(sigma, &base, mu, rng)
}

pub fn sample_g<R: Rng + ?Sized>(
    sigma: &Permutation,
    eta: &[f64],
    maps: &TopicMaps,
    lambda: f64,
    rng: &mut R,
) -> Result<Permutation> {
    check_lambda(lambda)?;
    let base: Vec<f64> = item_scores(sigma, eta, maps)?
        .into_iter()
        .map(|s| lambda * s)
        .collect();
    Ok(sample_stagewise(sigma, &base, 1.0 - lambda, rng))
}

/// Inputs shared by [`expected_log_g_bound`] and [`grad_eta_bound`].
#[derive(Debug, Clone, Copy)]
pub struct BoundQuery<'a> {
    pub pi: &'a Permutation,
    pub sigma: &'a Permutation,
    pub eta_tilde: &'a [f64],
    pub maps: &'a TopicMaps,
    pub lambda: f64,
    pub gamma: f64,
}

struct BoundSetup {
    pair: PreparedPair,
    scores: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl BoundQuery<'_> {
    fn setup(&self) -> Result<BoundSetup> {
        check_lambda(self.lambda)?;
        if !(self.gamma > 0.0) {
            return Err(LtpError::InvalidParameter("gamma must be positive".into()));
        }
        if self.eta_tilde.len() != self.maps.num_topics() {
            return Err(LtpError::TopicCountMismatch {
                expected: self.maps.num_topics(),
                found: self.eta_tilde.len(),
            });
        }
        let pair = PreparedPair::new(self.pi, self.sigma, self.maps)?;
        let (scores, sq_norms) = (0..self.maps.len())
            .map(|r| {
                let theta = self.maps.row(r);
                (dot(self.eta_tilde, theta), dot(theta, theta))
            })
            .unzip();
        Ok(BoundSetup {
            pair,
            scores,
            sq_norms,
        })
    }

    fn rows<'s>(&self, setup: &'s BoundSetup) -> BoundRows<'s> {
        BoundRows {
            scores: &setup.scores,
            sq_norms: &setup.sq_norms,
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }

    /// The ζ that makes the bound tight for this query.
    pub fn optimal_zeta(&self) -> Result<Vec<f64>> {
        let setup = self.setup()?;
        Ok(setup
            .pair
            .optimal_log_zeta(&self.rows(&setup))
            .into_iter()
            .map(f64::exp)
            .collect())
    }
}

fn log_zeta(zeta: &[f64], n: usize) -> Result<Vec<f64>> {
    if zeta.len() != n {
        return Err(LtpError::InvalidParameter(format!(
            "expected {n} zeta values, got {}",
            zeta.len()
        )));
    }
    zeta.iter()
        .map(|&z| {
            if z > 0.0 && z.is_finite() {
                Ok(z.ln())
            } else {
                Err(LtpError::InvalidParameter(format!(
                    "zeta {z} must be positive"
                )))
            }
        })
        .collect()
}

/// Lower bound on E_η[ln g(π | η; σ, λ, θ)] for η ~ N(η̃, γ²I), one ζ per stage.
pub fn expected_log_g_bound(query: &BoundQuery<'_>, zeta: &[f64]) -> Result<f64> {
    let setup = query.setup()?;
    let lz = log_zeta(zeta, setup.pair.len())?;
    Ok(setup.pair.expected_log_g_bound(&query.rows(&setup), &lz))
}

/// Gradient of [`expected_log_g_bound`] with respect to η̃ at fixed ζ.
pub fn grad_eta_bound(query: &BoundQuery<'_>, zeta: &[f64]) -> Result<Vec<f64>> {
    let setup = query.setup()?;
    let lz = log_zeta(zeta, setup.pair.len())?;
    let coef = setup.pair.bound_grad_coefficients(&query.rows(&setup), &lz);
    let mut grad = vec![0.0; query.maps.num_topics()];
    for (c, &row) in coef.iter().zip(setup.pair.rows()) {
        for (g, th) in grad.iter_mut().zip(query.maps.row(row)) {
            *g += c * th;
        }
    }
    Ok(grad)
}
