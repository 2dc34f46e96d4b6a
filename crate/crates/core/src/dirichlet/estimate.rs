//! BFGS maximisation of the Multinomial-Dirichlet log-likelihood.
//!
//! The search runs in log-space, `θ_j = ln α_j`, minimising `−L(exp θ)`.
//! Positivity of every iterate is automatic and the unconstrained quasi-Newton
//! update applies unchanged. Convergence is tested in `α` coordinates: the
//! norm of `∇_α L` or the norm of the accepted `α` step falls below `tol`.

use serde::{Deserialize, Serialize};

use super::likelihood::{add_grad_raw, log_likelihood_raw};
use super::{ConcentrationVector, LabelHistogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub alpha: ConcentrationVector,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at every accepted iterate, starting with the initial guess.
    pub trace: Vec<f64>,
}

/// Estimates `α` from a single histogram.
pub fn estimate_concentration(
    hist: &LabelHistogram,
    init: &ConcentrationVector,
    opts: &BfgsOptions,
) -> Result<Estimate> {
    estimate_concentration_pooled(std::slice::from_ref(hist), init, opts)
}

const MAX_LOG_STEP: f64 = 2.0;

/// Estimates one `α` shared by several independent histograms.
pub fn estimate_concentration_pooled(
    hists: &[LabelHistogram],
    init: &ConcentrationVector,
    opts: &BfgsOptions,
) -> Result<Estimate> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if hists.is_empty() {
        return Err(Error::domain("no histograms to estimate from"));
    }
    let c = init.len();
    for h in hists {
        if h.num_classes() != c {
            return Err(Error::shape(c, h.num_classes()));
        }
    }
    let objective = Objective { hists };
    let l0 = objective.value(init.as_slice());
    if hists.iter().all(LabelHistogram::is_empty) {
        return Ok(Estimate {
            alpha: init.clone(),
            converged: true,
            iterations: 0,
            log_likelihood: l0,
            trace: vec![l0],
        });
    }

    let mut alpha = init.as_slice().to_vec();
    let mut theta: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let mut f = -l0;
    let mut grad_alpha = objective.grad(&alpha);
    let mut g = theta_grad(&alpha, &grad_alpha);
    let mut h_inv = identity(c);
    let mut trace = vec![l0];
    let mut converged = norm(&grad_alpha) < opts.tol;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let mut dir = mat_vec(&h_inv, &g);
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            h_inv = identity(c);
            dir = g.iter().map(|x| -x).collect();
            slope = dot(&dir, &g);
        }

        // Backtracking Armijo search on −L, starting no further than a factor e^MAX_LOG_STEP in any α_j.
        let longest = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut step = opts.initial_step.min(MAX_LOG_STEP / longest);
        let accepted = loop {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let trial_alpha: Vec<f64> = trial.iter().map(|t| t.exp()).collect();
            if trial_alpha.iter().all(|a| *a > 0.0 && a.is_finite()) {
                let ft = -objective.value(&trial_alpha);
                if ft.is_finite() && ft <= f + opts.armijo_c * step * slope {
                    break Some((trial, trial_alpha, ft));
                }
            }
            step *= opts.shrink;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((new_theta, new_alpha, new_f)) = accepted else {
            break;
        };

        let new_grad_alpha = objective.grad(&new_alpha);
        let new_g = theta_grad(&new_alpha, &new_grad_alpha);
        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-12 * norm(&y) * norm(&s) && ys > 0.0 {
            bfgs_update(&mut h_inv, &s, &y, ys);
        }

        let alpha_step = new_alpha
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = new_theta;
        alpha = new_alpha;
        f = new_f;
        grad_alpha = new_grad_alpha;
        g = new_g;
        trace.push(-f);
        converged = norm(&grad_alpha) < opts.tol || alpha_step < opts.tol;
    }

    Ok(Estimate {
        alpha: ConcentrationVector::new(alpha)?,
        converged,
        iterations,
        log_likelihood: -f,
        trace,
    })
}

struct Objective<'a> {
    hists: &'a [LabelHistogram],
}

impl Objective<'_> {
    fn value(&self, alpha: &[f64]) -> f64 {
        let a0: f64 = alpha.iter().sum();
        self.hists
            .iter()
            .map(|h| log_likelihood_raw(h.counts(), h.total(), alpha, a0))
            .sum()
    }

    fn grad(&self, alpha: &[f64]) -> Vec<f64> {
        let a0: f64 = alpha.iter().sum();
        let mut g = vec![0.0; alpha.len()];
        for h in self.hists {
            add_grad_raw(h.counts(), h.total(), alpha, a0, &mut g);
        }
        g
    }
}

/// Gradient of `−L(exp θ)` with respect to `θ`.
fn theta_grad(alpha: &[f64], grad_alpha: &[f64]) -> Vec<f64> {
    alpha.iter().zip(grad_alpha).map(|(a, g)| -a * g).collect()
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`, `ρ = 1 / yᵀs`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    // Expanded form: H + ρ²(yᵀHy)ssᵀ + ρ ssᵀ − ρ(Hy sᵀ + s yᵀH)
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += (rho * rho * yhy + rho) * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
