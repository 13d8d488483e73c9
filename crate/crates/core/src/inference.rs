//! Mean-field variational inference of the personalization vector with λ
//! and μ held fixed.
//!
//! The variational family is
//!
//! * `q(z_i = 1) = φ_i` (query `i` was topically personalized),
//! * `q(τ) = Beta(κ₁, κ₂)` with κ₁ carrying the mass of `z = 1`,
//! * `q(η) = N(η̃, γ²I)` with the covariance fixed at the prior's.
//!
//! Coordinate ascent updates κ, then ζ and φ, then η̃. Each update maximizes
//! the evidence lower bound over its own block, so the bound never decreases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{LtpError, Result};
use crate::optim::{maximize_cg, CgOptions};
use crate::perm_models::{dot, BoundRows, ModelParams, PreparedPair};
use crate::rankings::QueryObservation;
use crate::topic_model::TopicMaps;

/// φ is kept strictly inside (0, 1).
const PHI_FLOOR: f64 = 1e-12;

/// Observations prepared against a topic-map table.
#[derive(Debug, Clone)]
pub struct Dataset {
    query_ids: Vec<String>,
    pairs: Vec<PreparedPair>,
    theta: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    num_topics: usize,
}

impl Dataset {
    /// Fails with [`LtpError::MissingTopicMap`] if any item lacks a topic-map.
    pub fn new(observations: &[QueryObservation], maps: &TopicMaps) -> Result<Self> {
        let mut pairs = Vec::with_capacity(observations.len());
        for obs in observations {
            pairs.push(PreparedPair::new(&obs.pi, &obs.sigma, maps)?);
        }
        let theta: Vec<Vec<f64>> = (0..maps.len()).map(|r| maps.row(r).to_vec()).collect();
        let sq_norms = theta.iter().map(|t| dot(t, t)).collect();
        Ok(Self {
            query_ids: observations.iter().map(|o| o.query_id.clone()).collect(),
            pairs,
            theta,
            sq_norms,
            num_topics: maps.num_topics(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn pairs(&self) -> &[PreparedPair] {
        &self.pairs
    }

    pub(crate) fn row_scores(&self, eta: &[f64]) -> Vec<f64> {
        self.theta.iter().map(|t| dot(eta, t)).collect()
    }

    pub(crate) fn bound_rows<'a>(
        &'a self,
        scores: &'a [f64],
        params: &ModelParams,
    ) -> BoundRows<'a> {
        BoundRows {
            scores,
            sq_norms: &self.sq_norms,
            lambda: params.lambda,
            gamma: params.gamma,
        }
    }

    /// ln f for every query.
    pub fn log_f(&self, mu: f64) -> Vec<f64> {
        self.pairs.par_iter().map(|p| p.log_f(mu)).collect()
    }

    /// The ζ-optimal E[ln g] bound for every query at η̃.
    pub fn profiled_bounds(&self, eta_tilde: &[f64], params: &ModelParams) -> Vec<f64> {
        let scores = self.row_scores(eta_tilde);
        let rows = self.bound_rows(&scores, params);
        self.pairs
            .par_iter()
            .map(|p| p.profiled_bound(&rows))
            .collect()
    }

    fn accumulate_rows(&self, pair: &PreparedPair, coef: &[f64], weight: f64, grad: &mut [f64]) {
        for (c, &r) in coef.iter().zip(pair.rows()) {
            let c = weight * c;
            for (g, th) in grad.iter_mut().zip(&self.theta[r]) {
                *g += c * th;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationalState {
    /// q(z_i = 1) per query.
    pub phi: Vec<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub eta_tilde: Vec<f64>,
    /// ln ζ per query per stage.
    pub log_zeta: Vec<Vec<f64>>,
    pub elbo: f64,
    /// ELBO at initialization and after every sweep.
    pub elbo_trace: Vec<f64>,
    /// ELBO after every individual block update (κ, ζ, φ, η̃), when recorded.
    #[serde(skip)]
    pub block_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl VariationalState {
    /// Posterior mean of the personalization rate τ.
    pub fn tau_mean(&self) -> f64 {
        self.kappa1 / (self.kappa1 + self.kappa2)
    }
}

/// Random start: φ uniform in (0, 1), κ₁ = κ₂ = δ + m/2, η̃ ~ N(0, 0.01²).
pub fn init_state<R: Rng + ?Sized>(
    m: usize,
    num_topics: usize,
    delta: f64,
    rng: &mut R,
) -> VariationalState {
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    let phi = (0..m)
        .map(|_| rng.random::<f64>().clamp(PHI_FLOOR, 1.0 - PHI_FLOOR))
        .collect();
    let eta_tilde = (0..num_topics).map(|_| noise.sample(rng)).collect();
    VariationalState {
        phi,
        kappa1: delta + m as f64 / 2.0,
        kappa2: delta + m as f64 / 2.0,
        eta_tilde,
        log_zeta: vec![Vec::new(); m],
        elbo: f64::NAN,
        elbo_trace: Vec::new(),
        block_trace: Vec::new(),
        iterations: 0,
        converged: false,
    }
}

/// κ₁ = δ + Σφ (mass of z = 1), κ₂ = δ + Σ(1 − φ).
pub fn update_kappas(phi: &[f64], delta: f64) -> (f64, f64) {
    let s: f64 = phi.iter().sum();
    (delta + s, delta + phi.len() as f64 - s)
}

/// φ_i = 1 / (1 + e^{m_i}), m_i = Ψ(κ₂) − Ψ(κ₁) + ln f_i − E[ln g_i].
pub fn update_phi(kappa1: f64, kappa2: f64, log_f: f64, expected_log_g: f64) -> f64 {
    let m = digamma(kappa2) - digamma(kappa1) + log_f - expected_log_g;
    (1.0 / (1.0 + m.exp())).clamp(PHI_FLOOR, 1.0 - PHI_FLOOR)
}

/// Sets every ζ to its closed-form optimum at the current η̃.
pub fn refresh_zeta(data: &Dataset, state: &mut VariationalState, params: &ModelParams) {
    let scores = data.row_scores(&state.eta_tilde);
    let rows = data.bound_rows(&scores, params);
    state.log_zeta = data
        .pairs
        .par_iter()
        .map(|p| p.optimal_log_zeta(&rows))
        .collect();
}

fn expected_log_g(data: &Dataset, state: &VariationalState, params: &ModelParams) -> Vec<f64> {
    let scores = data.row_scores(&state.eta_tilde);
    let rows = data.bound_rows(&scores, params);
    data.pairs
        .par_iter()
        .zip(state.log_zeta.par_iter())
        .map(|(p, lz)| p.expected_log_g_bound(&rows, lz))
        .collect()
}

/// L(η̃) = −η̃'η̃/(2γ²) + Σ_i φ_i B_i(η̃, ζ_i) and its gradient, with ζ held
/// fixed.
pub fn eta_objective(
    data: &Dataset,
    phi: &[f64],
    log_zeta: &[Vec<f64>],
    eta_tilde: &[f64],
    params: &ModelParams,
) -> (f64, Vec<f64>) {
    let scores = data.row_scores(eta_tilde);
    let rows = data.bound_rows(&scores, params);
    let per_query: Vec<(f64, Vec<f64>)> = data
        .pairs
        .par_iter()
        .zip(log_zeta.par_iter())
        .map(|(p, lz)| {
            (
                p.expected_log_g_bound(&rows, lz),
                p.bound_grad_coefficients(&rows, lz),
            )
        })
        .collect();
    let g2 = params.gamma * params.gamma;
    let mut value = -dot(eta_tilde, eta_tilde) / (2.0 * g2);
    let mut grad: Vec<f64> = eta_tilde.iter().map(|e| -e / g2).collect();
    for ((pair, (b, coef)), &w) in data.pairs.iter().zip(&per_query).zip(phi) {
        value += w * b;
        data.accumulate_rows(pair, coef, w, &mut grad);
    }
    (value, grad)
}

/// L(η̃) with every ζ at its optimum for the same η̃. Maximizing this jointly
/// maximizes over η̃ and ζ; by the envelope theorem its gradient is the
/// fixed-ζ gradient evaluated at the optimal ζ.
fn profiled_eta_objective(
    data: &Dataset,
    phi: &[f64],
    eta_tilde: &[f64],
    params: &ModelParams,
    grad: &mut [f64],
) -> f64 {
    let scores = data.row_scores(eta_tilde);
    let rows = data.bound_rows(&scores, params);
    let per_query: Vec<(f64, Vec<f64>)> = data
        .pairs
        .par_iter()
        .map(|p| {
            let lz = p.optimal_log_zeta(&rows);
            (
                p.profiled_bound(&rows),
                p.bound_grad_coefficients(&rows, &lz),
            )
        })
        .collect();
    let g2 = params.gamma * params.gamma;
    let mut value = -dot(eta_tilde, eta_tilde) / (2.0 * g2);
    for (g, e) in grad.iter_mut().zip(eta_tilde) {
        *g = -e / g2;
    }
    for ((pair, (b, coef)), &w) in data.pairs.iter().zip(&per_query).zip(phi) {
        value += w * b;
        data.accumulate_rows(pair, coef, w, grad);
    }
    value
}

/// Maximizes L over η̃ by conjugate gradient, starting from the current η̃.
/// ζ is re-optimized at every trial point, so the caller should refresh the
/// stored ζ afterwards.
pub fn maximize_eta(
    data: &Dataset,
    state: &VariationalState,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if state.phi.iter().all(|&p| p == 0.0) {
        return Ok(vec![0.0; data.num_topics]);
    }
    let opts = CgOptions {
        max_iters: 1000,
        grad_tol: 1e-8,
        rel_tol: 1e-14,
    };
    let out = maximize_cg(
        |x, g| profiled_eta_objective(data, &state.phi, x, params, g),
        state.eta_tilde.clone(),
        &opts,
    )
    .map_err(|e| match e {
        LtpError::NonFinite(what) => LtpError::NonFinite(format!("eta maximization: {what}")),
        other => other,
    })?;
    if out.x.iter().any(|x| !x.is_finite()) {
        return Err(LtpError::NonFinite("eta maximization diverged".into()));
    }
    Ok(out.x)
}

/// Individual ELBO terms. Dropped constants: the Gaussian normalizer and
/// trace term of E[ln p(η|γ)], the entropy of q(η) (its covariance is fixed
/// at γ²I), and −ln B(δ, δ) from E[ln p(τ|δ)].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboTerms {
    /// Σ_i E[ln p(z_i | τ)].
    pub z_prior: f64,
    /// E[ln p(τ | δ)].
    pub tau_prior: f64,
    /// E[ln p(η | γ)].
    pub eta_prior: f64,
    /// Σ_i φ_i · E[ln g_i] (bound).
    pub g_data: f64,
    /// Σ_i (1 − φ_i) · ln f_i.
    pub f_data: f64,
    /// H(q(z)).
    pub z_entropy: f64,
    /// H(q(τ)).
    pub tau_entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.z_prior
            + self.tau_prior
            + self.eta_prior
            + self.g_data
            + self.f_data
            + self.z_entropy
            + self.tau_entropy
    }
}

fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

pub fn compute_elbo_terms(
    data: &Dataset,
    state: &VariationalState,
    params: &ModelParams,
) -> Result<ElboTerms> {
    let (k1, k2) = (state.kappa1, state.kappa2);
    let psi1 = digamma(k1);
    let psi2 = digamma(k2);
    let psi12 = digamma(k1 + k2);
    let elog_tau = psi1 - psi12;
    let elog_not_tau = psi2 - psi12;

    let log_f = data.log_f(params.mu);
    let log_g = expected_log_g(data, state, params);

    let mut terms = ElboTerms {
        z_prior: 0.0,
        tau_prior: (params.delta - 1.0) * (psi1 + psi2 - 2.0 * psi12),
        eta_prior: -dot(&state.eta_tilde, &state.eta_tilde) / (2.0 * params.gamma * params.gamma),
        g_data: 0.0,
        f_data: 0.0,
        z_entropy: 0.0,
        tau_entropy: ln_gamma(k1) + ln_gamma(k2)
            - ln_gamma(k1 + k2)
            - (k1 - 1.0) * psi1
            - (k2 - 1.0) * psi2
            + (k1 + k2 - 2.0) * psi12,
    };
    for ((&phi, lf), lg) in state.phi.iter().zip(&log_f).zip(&log_g) {
        terms.z_prior += phi * elog_tau + (1.0 - phi) * elog_not_tau;
        terms.g_data += phi * lg;
        terms.f_data += (1.0 - phi) * lf;
        terms.z_entropy += bernoulli_entropy(phi);
    }

    let named = [
        ("z_prior", terms.z_prior),
        ("tau_prior", terms.tau_prior),
        ("eta_prior", terms.eta_prior),
        ("g_data", terms.g_data),
        ("f_data", terms.f_data),
        ("z_entropy", terms.z_entropy),
        ("tau_entropy", terms.tau_entropy),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(LtpError::NonFinite(format!("ELBO term {name}")));
    }
    Ok(terms)
}

pub fn compute_elbo(data: &Dataset, state: &VariationalState, params: &ModelParams) -> Result<f64> {
    compute_elbo_terms(data, state, params).map(|t| t.total())
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceOptions {
    /// Relative ELBO change that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Record the ELBO after every block update.
    pub record_blocks: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            seed: 0,
            record_blocks: false,
        }
    }
}

/// The state returned for an empty observation set: the prior.
fn prior_state(num_topics: usize, delta: f64) -> VariationalState {
    VariationalState {
        phi: Vec::new(),
        kappa1: delta,
        kappa2: delta,
        eta_tilde: vec![0.0; num_topics],
        log_zeta: Vec::new(),
        elbo: 0.0,
        elbo_trace: vec![0.0],
        block_trace: Vec::new(),
        iterations: 0,
        converged: true,
    }
}

/// Runs coordinate ascent from a seeded random start.
pub fn run_ltp_inf(
    data: &Dataset,
    params: &ModelParams,
    opts: &InferenceOptions,
) -> Result<VariationalState> {
    params.validate()?;
    if data.is_empty() {
        return Ok(prior_state(data.num_topics, params.delta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let state = init_state(data.len(), data.num_topics, params.delta, &mut rng);
    run_ltp_inf_from(data, params, state, opts)
}

/// Runs coordinate ascent from an existing state (warm start).
pub fn run_ltp_inf_from(
    data: &Dataset,
    params: &ModelParams,
    mut state: VariationalState,
    opts: &InferenceOptions,
) -> Result<VariationalState> {
    params.validate()?;
    if data.is_empty() {
        return Ok(prior_state(data.num_topics, params.delta));
    }
    if state.phi.len() != data.len() || state.eta_tilde.len() != data.num_topics {
        return Err(LtpError::InvalidParameter(
            "variational state does not match the data".into(),
        ));
    }

    refresh_zeta(data, &mut state, params);
    state.elbo = compute_elbo(data, &state, params)?;
    state.elbo_trace.push(state.elbo);
    state.converged = false;
    let log_f = data.log_f(params.mu);

    for _ in 0..opts.max_iters {
        let record = |state: &mut VariationalState| -> Result<()> {
            if opts.record_blocks {
                let e = compute_elbo(data, state, params)?;
                state.block_trace.push(e);
            }
            Ok(())
        };

        let (k1, k2) = update_kappas(&state.phi, params.delta);
        state.kappa1 = k1;
        state.kappa2 = k2;
        record(&mut state)?;

        refresh_zeta(data, &mut state, params);
        record(&mut state)?;

        let log_g = expected_log_g(data, &state, params);
        state.phi = log_f
            .iter()
            .zip(&log_g)
            .map(|(lf, lg)| update_phi(k1, k2, *lf, *lg))
            .collect();
        record(&mut state)?;

        state.eta_tilde = maximize_eta(data, &state, params)?;
        refresh_zeta(data, &mut state, params);
        record(&mut state)?;

        let prev = state.elbo;
        state.elbo = compute_elbo(data, &state, params)?;
        state.elbo_trace.push(state.elbo);
        state.iterations += 1;
        if ((state.elbo - prev) / prev.abs().max(1e-300)).abs() < opts.tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        log::warn!(
            "inference stopped after {} sweeps without converging",
            opts.max_iters
        );
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankings::Permutation;

    fn obs(id: &str, sigma: &[&str], pi: &[&str]) -> QueryObservation {
        QueryObservation::new(
            id,
            Permutation::new(sigma.iter().copied()).unwrap(),
            Permutation::new(pi.iter().copied()).unwrap(),
        )
        .unwrap()
    }

    fn toy_maps() -> TopicMaps {
        let mut maps = TopicMaps::new(3);
        maps.insert("a", &[1.0, 0.0, 0.0]).unwrap();
        maps.insert("b", &[0.0, 1.0, 0.0]).unwrap();
        maps.insert("c", &[0.0, 0.0, 1.0]).unwrap();
        maps.insert("d", &[0.5, 0.5, 0.0]).unwrap();
        maps.insert("e", &[0.2, 0.2, 0.6]).unwrap();
        maps
    }

    #[test]
    fn kappa_updates() {
        assert_eq!(update_kappas(&[0.5; 10], 2.0), (7.0, 7.0));
        let (k1, k2) = update_kappas(&[1.0; 10], 2.0);
        assert_eq!((k1, k2), (12.0, 2.0));
        let phi = [0.1, 0.73, 0.42, 0.99];
        let (k1, k2) = update_kappas(&phi, 1.5);
        assert!((k1 + k2 - (3.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn phi_symmetry_point() {
        assert!((update_phi(3.0, 3.0, -2.0, -2.0) - 0.5).abs() < 1e-15);
        assert!(update_phi(4.0, 3.0, -2.0, -2.0) > 0.5);
        assert!(update_phi(3.0, 3.0, -2.0, -1.0) > 0.5);
    }

    #[test]
    fn phi_low_when_f_explains_identity() {
        let maps = toy_maps();
        let data = Dataset::new(&[obs("q", &["a", "b", "c"], &["a", "b", "c"])], &maps).unwrap();
        let params = ModelParams {
            mu: 10.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = init_state(1, 3, params.delta, &mut rng);
        state.eta_tilde = vec![0.0; 3];
        refresh_zeta(&data, &mut state, &params);
        let lg = expected_log_g(&data, &state, &params)[0];
        let lf = data.log_f(params.mu)[0];
        assert!(update_phi(5.0, 5.0, lf, lg) < 0.5);
    }

    #[test]
    fn phi_high_for_score_explained_rerank() {
        let maps = toy_maps();
        // η̃ favours topic 2 (items c, e); π puts them first against σ.
        let data = Dataset::new(
            &[obs(
                "q",
                &["a", "b", "d", "e", "c"],
                &["c", "e", "a", "b", "d"],
            )],
            &maps,
        )
        .unwrap();
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = init_state(1, 3, params.delta, &mut rng);
        state.eta_tilde = vec![0.0, 0.0, 4.0];
        refresh_zeta(&data, &mut state, &params);
        let lg = expected_log_g(&data, &state, &params)[0];
        let lf = data.log_f(params.mu)[0];
        assert!(update_phi(5.0, 5.0, lf, lg) > 0.9);
    }

    #[test]
    fn zero_phi_gives_zero_eta() {
        let maps = toy_maps();
        let data = Dataset::new(&[obs("q", &["a", "b", "c"], &["c", "b", "a"])], &maps).unwrap();
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = init_state(1, 3, params.delta, &mut rng);
        state.phi = vec![0.0];
        state.eta_tilde = vec![1.0, -2.0, 0.5];
        refresh_zeta(&data, &mut state, &params);
        assert_eq!(maximize_eta(&data, &state, &params).unwrap(), vec![0.0; 3]);
        // With tiny weight the prior still dominates.
        state.phi = vec![PHI_FLOOR];
        let eta = maximize_eta(&data, &state, &params).unwrap();
        assert!(eta.iter().all(|e| e.abs() < 1e-8), "{eta:?}");
    }

    #[test]
    fn elbo_by_hand_for_single_identity_pair() {
        let mut maps = TopicMaps::new(2);
        maps.insert("a", &[0.6, 0.4]).unwrap();
        maps.insert("b", &[0.1, 0.9]).unwrap();
        let data = Dataset::new(&[obs("q", &["a", "b"], &["a", "b"])], &maps).unwrap();
        let params = ModelParams {
            mu: 1.0,
            lambda: 0.5,
            gamma: 1.0,
            delta: 2.0,
        };
        let state = VariationalState {
            phi: vec![0.3],
            kappa1: 2.3,
            kappa2: 2.7,
            eta_tilde: vec![0.4, -0.2],
            log_zeta: vec![vec![0.0, 0.0]],
            elbo: 0.0,
            elbo_trace: vec![],
            block_trace: vec![],
            iterations: 0,
            converged: false,
        };
        let mut state = state;
        refresh_zeta(&data, &mut state, &params);
        let got = compute_elbo(&data, &state, &params).unwrap();

        // Independent evaluation of each term.
        let (phi, k1, k2, d): (f64, f64, f64, f64) = (0.3, 2.3, 2.7, 2.0);
        let ps = |x: f64| digamma(x);
        let z_prior = phi * (ps(k1) - ps(k1 + k2)) + (1.0 - phi) * (ps(k2) - ps(k1 + k2));
        let tau_prior = (d - 1.0) * (ps(k1) + ps(k2) - 2.0 * ps(k1 + k2));
        let eta_prior = -(0.4f64 * 0.4 + 0.2 * 0.2) / 2.0;
        let ln_f = -(1.0 + (-1.0f64).exp()).ln();
        // Stage 1: both items; stage 2: item b alone. λ = 0.5, γ = 1.
        let s_a = 0.6 * 0.4 - 0.4 * 0.2;
        let s_b = 0.1 * 0.4 - 0.9 * 0.2;
        let q_a = 0.36 + 0.16;
        let q_b = 0.01 + 0.81;
        let m = |s: f64, q: f64, dist: f64| (0.5 * s + 0.125 * q + 0.5 * dist).exp();
        let stage1 = 0.5 * s_a + 0.5 * 0.0 - (m(s_a, q_a, 0.0) + m(s_b, q_b, -1.0)).ln();
        let stage2 = 0.5 * s_b + 0.5 * 0.0 - m(s_b, q_b, 0.0).ln();
        let data_terms = phi * (stage1 + stage2) + (1.0 - phi) * ln_f;
        let entropy_z = -(phi * phi.ln() + (1.0 - phi) * (1.0 - phi).ln());
        let entropy_tau = ln_gamma(k1) + ln_gamma(k2)
            - ln_gamma(k1 + k2)
            - (k1 - 1.0) * ps(k1)
            - (k2 - 1.0) * ps(k2)
            + (k1 + k2 - 2.0) * ps(k1 + k2);
        let want = z_prior + tau_prior + eta_prior + data_terms + entropy_z + entropy_tau;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn doubling_gamma_touches_only_gamma_terms() {
        let maps = toy_maps();
        let data = Dataset::new(
            &[
                obs("q1", &["a", "b", "c"], &["c", "a", "b"]),
                obs("q2", &["d", "e", "a"], &["d", "e", "a"]),
            ],
            &maps,
        )
        .unwrap();
        let p1 = ModelParams::default();
        let p2 = ModelParams { gamma: 2.0, ..p1 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = init_state(2, 3, p1.delta, &mut rng);
        state.eta_tilde = vec![0.5, -0.3, 1.0];
        refresh_zeta(&data, &mut state, &p1);
        let a = compute_elbo_terms(&data, &state, &p1).unwrap();
        let b = compute_elbo_terms(&data, &state, &p2).unwrap();
        assert_eq!(a.z_prior, b.z_prior);
        assert_eq!(a.tau_prior, b.tau_prior);
        assert_eq!(a.f_data, b.f_data);
        assert_eq!(a.z_entropy, b.z_entropy);
        assert_eq!(a.tau_entropy, b.tau_entropy);
        assert_ne!(a.eta_prior, b.eta_prior);
        assert_ne!(a.g_data, b.g_data);
    }

    #[test]
    fn init_is_seeded_and_valid() {
        let a = init_state(4, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(7));
        let b = init_state(4, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(7));
        let c = init_state(4, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.eta_tilde, b.eta_tilde);
        assert_ne!(a.phi, c.phi);
        assert!(a.phi.iter().all(|p| *p > 0.0 && *p < 1.0));
        assert!(a.kappa1 > 0.0 && a.kappa2 > 0.0);
        assert_eq!(a.kappa1 + a.kappa2, 2.0 * 2.0 + 4.0);
    }

    #[test]
    fn empty_data_returns_prior() {
        let maps = toy_maps();
        let data = Dataset::new(&[], &maps).unwrap();
        let st = run_ltp_inf(&data, &ModelParams::default(), &InferenceOptions::default()).unwrap();
        assert_eq!(st.eta_tilde, vec![0.0; 3]);
        assert_eq!((st.kappa1, st.kappa2), (2.0, 2.0));
    }

    #[test]
    fn every_block_update_is_an_ascent() {
        let maps = toy_maps();
        let data = Dataset::new(
            &[
                obs("q1", &["a", "b", "c"], &["c", "a", "b"]),
                obs("q2", &["d", "e", "a"], &["e", "d", "a"]),
                obs("q3", &["a", "b", "c", "d", "e"], &["a", "b", "c", "d", "e"]),
                obs("q4", &["b", "c", "d"], &["c", "b", "d"]),
            ],
            &maps,
        )
        .unwrap();
        let opts = InferenceOptions {
            tol: 0.0,
            max_iters: 15,
            seed: 3,
            record_blocks: true,
        };
        let st = run_ltp_inf(&data, &ModelParams::default(), &opts).unwrap();
        let mut all = vec![st.elbo_trace[0]];
        all.extend(&st.block_trace);
        for w in all.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        for w in st.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
        }
    }

    #[test]
    fn eta_objective_is_concave_along_chords() {
        let maps = toy_maps();
        let data = Dataset::new(
            &[
                obs("q1", &["a", "b", "c"], &["c", "a", "b"]),
                obs("q2", &["d", "e", "a"], &["e", "d", "a"]),
            ],
            &maps,
        )
        .unwrap();
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = {
            let mut s = init_state(2, 3, params.delta, &mut rng);
            refresh_zeta(&data, &mut s, &params);
            s
        };
        let normal = Normal::new(0.0, 2.0).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..3).map(|_| normal.sample(&mut rng)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
            let l = |e: &[f64]| eta_objective(&data, &state.phi, &state.log_zeta, e, &params).0;
            assert!(l(&mid) >= (l(&a) + l(&b)) / 2.0 - 1e-9);
        }
    }
}
