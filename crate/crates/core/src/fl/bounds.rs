use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fedavg_aggregate, sgd, ModelParams, QuadraticObjective, TrainingConfig};
use crate::error::{Error, Result};
use crate::seed::{derive, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceParams {
    pub lipschitz: f64,
    pub pl_constant: f64,
    pub grad_variance_bound: f64,
    pub confidence: f64,
    pub concentration_sum: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self {
            lipschitz: 1.0,
            pl_constant: 0.1,
            grad_variance_bound: 1.0,
            confidence: 0.05,
            concentration_sum: 1.0,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lipschitz", self.lipschitz),
            ("pl_constant", self.pl_constant),
            ("grad_variance_bound", self.grad_variance_bound),
            ("concentration_sum", self.concentration_sum),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::domain(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }

    /// The learning rate the convergence theorem assumes.
    pub fn eta(&self) -> f64 {
        1.0 / self.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEvaluation {
    /// The bound as printed: `factor · gap − variance_term`.
    pub rhs: f64,
    pub factor: f64,
    /// `η Σβ² G² / (Σβ)²`, always non-negative.
    pub variance_term: f64,
    /// The factor lies outside `(0, 1]`, so the theorem's premise fails.
    pub warning: bool,
}

impl BoundEvaluation {
    /// The same bound with the variance term added instead of subtracted.
    pub fn with_variance_penalty(&self, prev_gap: f64) -> f64 {
        self.factor * prev_gap + self.variance_term
    }
}

fn positive_weights(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::domain(format!("{name} is empty")));
    }
    if let Some(x) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!("{name} entries must be finite and > 0, got {x}")));
    }
    Ok(())
}

/// Per-round bound on the expected global-loss gap.
pub fn convergence_bound_rhs(
    prev_gap: f64,
    params: &ConvergenceParams,
    eta: f64,
    betas: &[f64],
) -> Result<BoundEvaluation> {
    params.validate()?;
    positive_weights("betas", betas)?;
    if !(prev_gap >= 0.0) || !prev_gap.is_finite() {
        return Err(Error::domain(format!("previous gap must be finite and >= 0, got {prev_gap}")));
    }
    if (eta * params.lipschitz - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "the bound assumes eta = 1/L = {}, got {eta}",
            params.eta()
        )));
    }
    let s: f64 = betas.iter().sum();
    let s2: f64 = betas.iter().map(|b| b * b).sum();
    let ratio = s2 / (s * s);
    let factor = 1.0 - eta * 2.0 * params.pl_constant * ratio;
    let variance_term = eta * ratio * params.grad_variance_bound.powi(2);
    Ok(BoundEvaluation {
        rhs: factor * prev_gap - variance_term,
        factor,
        variance_term,
        warning: !(factor > 0.0 && factor <= 1.0),
    })
}

/// `√(Σ_i A² ln(2/δ) / (8 β_i² α_i²))`.
pub fn generalization_term(params: &ConvergenceParams, betas: &[f64], alphas: &[f64]) -> Result<f64> {
    params.validate()?;
    positive_weights("betas", betas)?;
    positive_weights("alphas", alphas)?;
    if betas.len() != alphas.len() {
        return Err(Error::shape(betas.len(), alphas.len()));
    }
    let a2 = params.concentration_sum.powi(2);
    let log_term = (2.0 / params.confidence).ln();
    let sum: f64 = betas
        .iter()
        .zip(alphas)
        .map(|(b, a)| a2 * log_term / (8.0 * b * b * a * a))
        .sum();
    Ok(sum.sqrt())
}

/// Federated gradient descent on `F(w) = ½‖w‖²` with perturbed local optima.
///
/// In round `t` each selected user minimises `½‖w − ξ_{i,t}‖²`, with `ξ`
/// uniform on the sphere of radius `noise_radius`. So `L = μ = 1` and every
/// local gradient differs from the global one by exactly `G = noise_radius`.
/// Local training is one full-batch step at `η = 1/L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticToy {
    pub dim: usize,
    pub num_users: usize,
    pub per_round: usize,
    pub rounds: usize,
    pub noise_radius: f64,
    pub start_distance: f64,
    pub max_samples: usize,
}

impl Default for QuadraticToy {
    fn default() -> Self {
        Self {
            dim: 50,
            num_users: 20,
            per_round: 6,
            rounds: 20,
            noise_radius: 0.5,
            start_distance: 10.0,
            max_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyTrace {
    /// `F(w_t) − F*`, starting with the initial model.
    pub gaps: Vec<f64>,
    /// Bound for round `t` (index `t − 1`) as printed.
    pub bounds: Vec<f64>,
    /// Bound for round `t` with the variance term added.
    pub penalised_bounds: Vec<f64>,
    pub factors: Vec<f64>,
    pub variance_terms: Vec<f64>,
    pub warnings: usize,
}

fn sphere_point<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = crate::linalg::norm(&v);
    v.into_iter().map(|x| radius * x / n).collect()
}

pub fn run_quadratic_toy(toy: &QuadraticToy, seed: u64) -> Result<ToyTrace> {
    if toy.dim == 0 || toy.per_round == 0 || toy.per_round > toy.num_users || toy.max_samples == 0 {
        return Err(Error::domain("toy needs dim >= 1 and 1 <= per_round <= num_users"));
    }
    let params = ConvergenceParams {
        lipschitz: 1.0,
        pl_constant: 1.0,
        grad_variance_bound: toy.noise_radius,
        confidence: 0.05,
        concentration_sum: 1.0,
    };
    let eta = params.eta();
    let cfg = TrainingConfig {
        learning_rate: eta,
        local_epochs: 1,
        batch_size: 1,
        rounds: toy.rounds,
    };
    let mut rng = rng_from(derive(seed, &[0]));
    let betas: Vec<f64> = (0..toy.num_users)
        .map(|_| rng.random_range(1..=toy.max_samples) as f64)
        .collect();
    let mut w = ModelParams::new(sphere_point(toy.dim, toy.start_distance, &mut rng))?;
    let gap = |m: &ModelParams| 0.5 * crate::linalg::dot(m.as_slice(), m.as_slice());

    let mut trace = ToyTrace {
        gaps: vec![gap(&w)],
        bounds: Vec::new(),
        penalised_bounds: Vec::new(),
        factors: Vec::new(),
        variance_terms: Vec::new(),
        warnings: 0,
    };
    for t in 0..toy.rounds {
        let mut r = rng_from(derive(seed, &[1, t as u64]));
        let selected = sample(&mut r, toy.num_users, toy.per_round).into_vec();
        let mut updates = Vec::with_capacity(selected.len());
        for &i in &selected {
            let obj = QuadraticObjective {
                centers: vec![sphere_point(toy.dim, toy.noise_radius, &mut r)],
            };
            updates.push((sgd(&obj, &w, &cfg, 0)?, betas[i]));
        }
        let sel_betas: Vec<f64> = selected.iter().map(|&i| betas[i]).collect();
        let prev = *trace.gaps.last().expect("non-empty");
        let b = convergence_bound_rhs(prev, &params, eta, &sel_betas)?;
        w = fedavg_aggregate(&updates)?;
        trace.gaps.push(gap(&w));
        trace.bounds.push(b.rhs);
        trace.penalised_bounds.push(b.with_variance_penalty(prev));
        trace.factors.push(b.factor);
        trace.variance_terms.push(b.variance_term);
        trace.warnings += usize::from(b.warning);
    }
    Ok(trace)
}
