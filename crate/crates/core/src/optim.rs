//! Small smooth optimizers: nonlinear conjugate gradient for concave
//! maximization and golden-section search on an interval.

use crate::error::{LtpError, Result};

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop once an iteration improves the objective by less than
    /// `rel_tol * max(1, |f|)`.
    pub rel_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-7,
            rel_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Maximizes a smooth concave objective with Polak-Ribière+ conjugate
/// gradient and a bracketing line search that targets the strong Wolfe
/// conditions.
///
/// `objective(x, grad)` returns f(x) and writes ∇f(x) into `grad`. Every
/// accepted step strictly increases f, so the returned value is never below
/// f(x0).
pub fn maximize_cg<F>(mut objective: F, x0: Vec<f64>, opts: &CgOptions) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LtpError::NonFinite("objective at starting point".into()));
    }
    if n == 0 {
        return Ok(CgOutcome {
            x,
            value,
            iterations: 0,
            converged: true,
        });
    }

    let mut dir = grad.clone();
    let mut step = 1.0 / max_abs(&grad).max(1.0);
    let mut prev_slope = f64::NAN;
    let mut search = LineSearch::new(n);

    for iter in 0..opts.max_iters {
        if max_abs(&grad) <= opts.grad_tol {
            return Ok(CgOutcome {
                x,
                value,
                iterations: iter,
                converged: true,
            });
        }
        let mut slope = dot(&grad, &dir);
        if slope <= 0.0 || iter % n == 0 && iter > 0 {
            dir.copy_from_slice(&grad);
            slope = dot(&grad, &grad);
        }
        if prev_slope.is_finite() {
            step = (step * prev_slope / slope).clamp(1e-12, 1e6);
        }

        let Some((taken, new_value)) = search.run(&mut objective, &x, value, slope, &dir, step)?
        else {
            // No ascent along the direction at machine precision.
            return Ok(CgOutcome {
                x,
                value,
                iterations: iter,
                converged: true,
            });
        };
        step = taken;

        let gg = dot(&grad, &grad);
        let new_grad = &search.best_grad;
        let beta = if gg > 0.0 {
            let num: f64 = new_grad
                .iter()
                .zip(&grad)
                .map(|(gn, g)| gn * (gn - g))
                .sum();
            (num / gg).max(0.0)
        } else {
            0.0
        };
        for i in 0..n {
            dir[i] = new_grad[i] + beta * dir[i];
        }

        let gain = new_value - value;
        x.copy_from_slice(&search.best_x);
        grad.copy_from_slice(&search.best_grad);
        value = new_value;
        prev_slope = slope;

        if gain <= opts.rel_tol * value.abs().max(1.0) {
            return Ok(CgOutcome {
                x,
                value,
                iterations: iter + 1,
                converged: true,
            });
        }
    }
    Ok(CgOutcome {
        x,
        value,
        iterations: opts.max_iters,
        converged: false,
    })
}

struct LineSearch {
    trial: Vec<f64>,
    trial_grad: Vec<f64>,
    best_x: Vec<f64>,
    best_grad: Vec<f64>,
}

impl LineSearch {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.1;
    const MAX_EVALS: usize = 60;

    fn new(n: usize) -> Self {
        Self {
            trial: vec![0.0; n],
            trial_grad: vec![0.0; n],
            best_x: vec![0.0; n],
            best_grad: vec![0.0; n],
        }
    }

    /// Searches along `dir` from `x`. Returns the accepted step and value, or
    /// `None` if no point with sufficient increase was found.
    fn run<F>(
        &mut self,
        objective: &mut F,
        x: &[f64],
        f0: f64,
        slope0: f64,
        dir: &[f64],
        mut a: f64,
    ) -> Result<Option<(f64, f64)>>
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        // `lo` always satisfies sufficient increase; `hi` bounds the search.
        let (mut lo, mut d_lo) = (0.0, slope0);
        let mut hi: Option<(f64, f64)> = None;
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..Self::MAX_EVALS {
            for i in 0..x.len() {
                self.trial[i] = x[i] + a * dir[i];
            }
            let v = objective(&self.trial, &mut self.trial_grad);
            let finite = v.is_finite() && self.trial_grad.iter().all(|g| g.is_finite());
            if !finite && v.is_finite() {
                return Err(LtpError::NonFinite("objective gradient".into()));
            }
            if !finite || v < f0 + Self::C1 * a * slope0 || best.is_some_and(|(_, bv)| v <= bv) {
                hi = Some((a, f64::NEG_INFINITY));
            } else {
                best = Some((a, v));
                self.best_x.copy_from_slice(&self.trial);
                self.best_grad.copy_from_slice(&self.trial_grad);
                let d = dot(&self.trial_grad, dir);
                if d.abs() <= Self::C2 * slope0 {
                    break;
                }
                if d > 0.0 {
                    lo = a;
                    d_lo = d;
                } else {
                    hi = Some((a, d));
                }
            }
            a = match hi {
                None => a * 2.0,
                Some((h, d_hi)) => {
                    let width = h - lo;
                    let guess = if d_hi.is_finite() && d_lo > d_hi {
                        lo + d_lo * width / (d_lo - d_hi)
                    } else {
                        lo + 0.5 * width
                    };
                    guess.clamp(lo + 0.1 * width, h - 0.1 * width)
                }
            };
            if let Some((h, _)) = hi {
                if (h - lo) <= 1e-16 * h.abs().max(1e-300) {
                    break;
                }
            }
        }
        Ok(best)
    }
}

/// Golden-section search for the maximum of a unimodal function on
/// `[lo, hi]`. Both endpoints are also evaluated so a boundary optimum is
/// returned exactly.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}
