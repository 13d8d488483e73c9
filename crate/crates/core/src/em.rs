//! Variational EM: alternate inference with (λ, μ) fixed and re-estimation
//! of (λ, μ) with the variational state fixed.
//!
//! In the expected log-joint λ appears only in the `g` terms and μ only in
//! the `f` terms, so the M-step is two independent 1-D concave problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::{
    run_ltp_inf, run_ltp_inf_from, Dataset, InferenceOptions, VariationalState,
};
use crate::optim::golden_section_max;
use crate::perm_models::{ModelParams, MU_MAX, MU_MIN};

/// Below this total responsibility a parameter has no data and keeps its
/// previous value.
const MIN_MASS: f64 = 1e-9;
const SEARCH_TOL: f64 = 1e-7;

/// Σ_i (1 − φ_i) ln f_i(μ).
pub fn mu_objective(data: &Dataset, phi: &[f64], mu: f64) -> f64 {
    data.log_f(mu)
        .iter()
        .zip(phi)
        .map(|(lf, p)| (1.0 - p) * lf)
        .sum()
}

/// Σ_i φ_i B_i(λ) with every ζ at its optimum for the trial λ.
pub fn lambda_objective(
    data: &Dataset,
    state: &VariationalState,
    params: &ModelParams,
    lambda: f64,
) -> f64 {
    let trial = ModelParams { lambda, ..*params };
    data.profiled_bounds(&state.eta_tilde, &trial)
        .iter()
        .zip(&state.phi)
        .map(|(b, p)| p * b)
        .sum()
}

/// Maximizes the μ objective over [`MU_MIN`, `MU_MAX`]; keeps `current` when
/// the f terms carry no weight or the search does not improve on it.
pub fn estimate_mu(data: &Dataset, phi: &[f64], current: f64) -> f64 {
    let mass: f64 = phi.iter().map(|p| 1.0 - p).sum();
    if mass < MIN_MASS {
        return current;
    }
    let (mut mu, mut value) =
        golden_section_max(|m| mu_objective(data, phi, m), MU_MIN, MU_MAX, SEARCH_TOL);
    // When the f terms are all identities the objective saturates at 0 in
    // floating point; the supremum is then at the upper bound.
    let at_max = mu_objective(data, phi, MU_MAX);
    if at_max >= value {
        (mu, value) = (MU_MAX, at_max);
    }
    if value > mu_objective(data, phi, current) {
        mu
    } else {
        current
    }
}

/// Maximizes the λ objective over [0, 1]; keeps `params.lambda` when the g
/// terms carry no weight or the search does not improve on it.
pub fn estimate_lambda(data: &Dataset, state: &VariationalState, params: &ModelParams) -> f64 {
    let mass: f64 = state.phi.iter().sum();
    if mass < MIN_MASS {
        return params.lambda;
    }
    let (lambda, value) = golden_section_max(
        |l| lambda_objective(data, state, params, l),
        0.0,
        1.0,
        SEARCH_TOL,
    );
    if value > lambda_objective(data, state, params, params.lambda) {
        lambda
    } else {
        params.lambda
    }
}

/// Returns the re-estimated (λ, μ).
pub fn m_step(data: &Dataset, state: &VariationalState, params: &ModelParams) -> (f64, f64) {
    (
        estimate_lambda(data, state, params),
        estimate_mu(data, &state.phi, params.mu),
    )
}

/// Uniform draws: λ⁰ in [0.1, 0.9], μ⁰ in [1, 10].
pub fn init_params<R: Rng + ?Sized>(gamma: f64, delta: f64, rng: &mut R) -> ModelParams {
    ModelParams {
        lambda: rng.random_range(0.1..=0.9),
        mu: rng.random_range(1.0..=10.0),
        gamma,
        delta,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Absolute change in both λ and μ that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Options for every E-step; its seed is ignored after the first one.
    pub inference: InferenceOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iters: 100,
            seed: 0,
            inference: InferenceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmStep {
    pub iter: usize,
    pub lambda: f64,
    pub mu: f64,
    /// ELBO at the end of this iteration's E-step, under (λ, μ) of this row.
    pub elbo: f64,
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: ModelParams,
    pub state: VariationalState,
    pub trace: Vec<EmStep>,
    pub converged: bool,
}

/// Runs EM from randomly drawn (λ⁰, μ⁰); γ and δ are taken from `prior`.
pub fn run_ltp_em(data: &Dataset, prior: &ModelParams, opts: &EmOptions) -> Result<EmResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = init_params(prior.gamma, prior.delta, &mut rng);
    run_ltp_em_from(data, start, opts)
}

/// Runs EM from the given starting parameters.
pub fn run_ltp_em_from(data: &Dataset, start: ModelParams, opts: &EmOptions) -> Result<EmResult> {
    start.validate()?;
    let mut params = start;
    let inf_opts = InferenceOptions {
        seed: opts.seed,
        ..opts.inference
    };
    let mut state = run_ltp_inf(data, &params, &inf_opts)?;
    let mut trace = vec![EmStep {
        iter: 0,
        lambda: params.lambda,
        mu: params.mu,
        elbo: state.elbo,
    }];
    if data.is_empty() {
        return Ok(EmResult {
            params,
            state,
            trace,
            converged: true,
        });
    }

    let mut converged = false;
    for iter in 1..=opts.max_iters {
        let (lambda, mu) = m_step(data, &state, &params);
        let change = (lambda - params.lambda).abs().max((mu - params.mu).abs());
        params.lambda = lambda;
        params.mu = mu;
        if mu < 1.0 {
            log::info!("estimated mu {mu:.4} is below 1");
        }
        state = run_ltp_inf_from(data, &params, state, &inf_opts)?;
        trace.push(EmStep {
            iter,
            lambda,
            mu,
            elbo: state.elbo,
        });
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            opts.max_iters
        );
    }
    Ok(EmResult {
        params,
        state,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::init_state;
    use crate::perm_models::sample_f;
    use crate::rankings::{Permutation, QueryObservation};
    use crate::topic_model::TopicMaps;

    fn uniform_maps(ids: &[String], t: usize) -> TopicMaps {
        let mut maps = TopicMaps::new(t);
        for (i, id) in ids.iter().enumerate() {
            let mut theta = vec![0.0; t];
            theta[i % t] = 1.0;
            maps.insert(id.clone(), &theta).unwrap();
        }
        maps
    }

    fn f_dataset(m: usize, n: usize, mu: f64, seed: u64) -> Dataset {
        let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let sigma = Permutation::new(ids.iter().cloned()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<QueryObservation> = (0..m)
            .map(|q| {
                QueryObservation::new(
                    format!("q{q}"),
                    sigma.clone(),
                    sample_f(&sigma, mu, &mut rng),
                )
                .unwrap()
            })
            .collect();
        Dataset::new(&obs, &uniform_maps(&ids, 3)).unwrap()
    }

    #[test]
    fn identity_data_pushes_mu_to_the_upper_bound() {
        let data = f_dataset(20, 6, 50.0, 0);
        assert!(data.pairs().iter().all(|p| p.log_f(50.0) > -1e-10));
        let phi = vec![0.0; data.len()];
        let mu = estimate_mu(&data, &phi, 3.0);
        assert!(mu > 49.9, "{mu}");
    }

    #[test]
    fn lambda_is_kept_without_g_mass() {
        let data = f_dataset(10, 5, 2.0, 1);
        let mut state = init_state(data.len(), 3, 2.0, &mut ChaCha8Rng::seed_from_u64(0));
        state.phi = vec![0.0; data.len()];
        let params = ModelParams {
            lambda: 0.37,
            ..Default::default()
        };
        assert_eq!(estimate_lambda(&data, &state, &params), 0.37);
    }

    #[test]
    fn mu_is_recovered_from_f_samples() {
        let data = f_dataset(500, 10, 3.0, 7);
        let phi = vec![0.0; data.len()];
        let mu = estimate_mu(&data, &phi, 1.0);
        assert!((2.5..=3.5).contains(&mu), "{mu}");
    }

    #[test]
    fn mu_objective_is_concave() {
        let data = f_dataset(30, 6, 1.5, 3);
        let phi: Vec<f64> = (0..data.len()).map(|i| (i as f64 * 0.37).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = rng.random_range(MU_MIN..MU_MAX);
            let b = rng.random_range(MU_MIN..MU_MAX);
            let mid = mu_objective(&data, &phi, (a + b) / 2.0);
            assert!(
                mid >= (mu_objective(&data, &phi, a) + mu_objective(&data, &phi, b)) / 2.0 - 1e-9
            );
        }
    }

    #[test]
    fn init_respects_the_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = init_params(1.0, 2.0, &mut rng);
            assert!((0.0..=1.0).contains(&p.lambda) && p.mu > 0.0);
            p.validate().unwrap();
        }
    }

    #[test]
    fn em_stays_in_bounds_and_is_monotone() {
        let data = f_dataset(40, 6, 2.0, 11);
        let res = run_ltp_em(
            &data,
            &ModelParams::default(),
            &EmOptions {
                seed: 2,
                max_iters: 20,
                ..Default::default()
            },
        )
        .unwrap();
        for w in res.trace.windows(2) {
            assert!(
                w[1].elbo >= w[0].elbo - 1e-8 * w[0].elbo.abs(),
                "{:?}",
                res.trace
            );
        }
        for s in &res.trace {
            assert!((0.0..=1.0).contains(&s.lambda));
            assert!(s.mu > 0.0 && s.mu <= MU_MAX);
        }
    }
}
