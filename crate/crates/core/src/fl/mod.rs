//! Federated training inside one cluster.
//!
//! The model family is multinomial logistic regression. Parameters are a flat
//! vector laid out class by class, `C × (d + 1)` entries, where each class
//! row holds `d` weights followed by its bias.

mod bounds;
mod checkpoint;

pub use bounds::{
    convergence_bound_rhs, generalization_term, run_quadratic_toy, BoundEvaluation, ConvergenceParams, QuadraticToy,
    ToyTrace,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dirichlet::UserDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::domain(format!("model weight {i} is not finite")));
        }
        Ok(Self { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            local_epochs: 1,
            batch_size: 16,
            rounds: 20,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain("learning_rate must be finite and > 0"));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.rounds == 0 {
            return Err(Error::domain("local_epochs, batch_size and rounds must be >= 1"));
        }
        Ok(())
    }
}

/// A sum-decomposable training objective: the loss is the mean of per-sample terms.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn sample_loss(&self, w: &[f64], k: usize) -> f64;
    /// Adds `scale · ∇ℓ_k(w)` to `out`.
    fn add_sample_grad(&self, w: &[f64], k: usize, scale: f64, out: &mut [f64]);

    fn batch_loss(&self, w: &[f64], batch: &[usize]) -> f64 {
        batch.iter().map(|&k| self.sample_loss(w, k)).sum::<f64>() / batch.len() as f64
    }

    fn batch_grad(&self, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        let s = 1.0 / batch.len() as f64;
        for &k in batch {
            self.add_sample_grad(w, k, s, &mut g);
        }
        g
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.batch_loss(w, &all)
    }

    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.batch_grad(w, &all)
    }
}

/// Parameter count of a softmax model on `dim` features and `classes` classes.
pub fn softmax_dim(dim: usize, classes: usize) -> usize {
    classes * (dim + 1)
}

/// Cross-entropy of softmax regression on one user's data.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxObjective<'a> {
    data: &'a UserDataset,
}

impl<'a> SoftmaxObjective<'a> {
    pub fn new(data: &'a UserDataset) -> Self {
        Self { data }
    }

    fn check(&self, model: &ModelParams) -> Result<()> {
        let want = softmax_dim(self.data.dim(), self.data.num_classes());
        if model.len() != want {
            return Err(Error::shape(want, model.len()));
        }
        if self.data.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        Ok(())
    }

    fn logits(&self, w: &[f64], k: usize) -> Vec<f64> {
        logits(w, self.data.row(k), self.data.num_classes())
    }
}

fn logits(w: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
    let d = x.len();
    (0..classes)
        .map(|c| {
            let row = &w[c * (d + 1)..(c + 1) * (d + 1)];
            row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[d]
        })
        .collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Objective for SoftmaxObjective<'_> {
    fn dim(&self) -> usize {
        softmax_dim(self.data.dim(), self.data.num_classes())
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn sample_loss(&self, w: &[f64], k: usize) -> f64 {
        let z = self.logits(w, k);
        // Clamped at zero: the exact value is non-negative, round-off is not.
        (log_sum_exp(&z) - z[self.data.label(k)]).max(0.0)
    }

    fn add_sample_grad(&self, w: &[f64], k: usize, scale: f64, out: &mut [f64]) {
        let x = self.data.row(k);
        let d = x.len();
        let z = self.logits(w, k);
        let lse = log_sum_exp(&z);
        let y = self.data.label(k);
        for (c, zc) in z.iter().enumerate() {
            let r = scale * ((zc - lse).exp() - if c == y { 1.0 } else { 0.0 });
            let row = &mut out[c * (d + 1)..(c + 1) * (d + 1)];
            for (o, xi) in row[..d].iter_mut().zip(x) {
                *o += r * xi;
            }
            row[d] += r;
        }
    }
}

/// `½‖w − c_k‖²` per sample; the closed-form test objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub centers: Vec<Vec<f64>>,
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    fn num_samples(&self) -> usize {
        self.centers.len()
    }

    fn sample_loss(&self, w: &[f64], k: usize) -> f64 {
        0.5 * crate::linalg::sq_dist(w, &self.centers[k])
    }

    fn add_sample_grad(&self, w: &[f64], k: usize, scale: f64, out: &mut [f64]) {
        for ((o, a), c) in out.iter_mut().zip(w).zip(&self.centers[k]) {
            *o += scale * (a - c);
        }
    }
}

/// Mean cross-entropy `f_i(w)` of `model` on `data`.
pub fn local_loss(model: &ModelParams, data: &UserDataset) -> Result<f64> {
    let obj = SoftmaxObjective::new(data);
    obj.check(model)?;
    Ok(obj.loss(model.as_slice()))
}

/// `Σ_{i∈S} β_i/Σβ · f_i(w)`.
pub fn global_loss(datasets: &[UserDataset], model: &ModelParams, selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::domain("selected user set is empty"));
    }
    let mut total = 0.0;
    let mut acc = 0.0;
    for &i in selected {
        let data = datasets
            .get(i)
            .ok_or_else(|| Error::domain(format!("user {i} out of range")))?;
        let beta = data.len() as f64;
        acc += beta * local_loss(model, data)?;
        total += beta;
    }
    Ok(acc / total)
}

/// Argmax of the logits.
pub fn predict(model: &ModelParams, x: &[f64], classes: usize) -> usize {
    let z = logits(model.as_slice(), x, classes);
    z.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(c, _)| c)
}

/// Returns (correct, total).
pub fn correct_count(model: &ModelParams, data: &UserDataset) -> Result<(usize, usize)> {
    SoftmaxObjective::new(data).check(model)?;
    let c = data.num_classes();
    let hits = (0..data.len())
        .filter(|&k| predict(model, data.row(k), c) == data.label(k))
        .count();
    Ok((hits, data.len()))
}

pub fn accuracy(model: &ModelParams, data: &UserDataset) -> Result<f64> {
    let (hits, n) = correct_count(model, data)?;
    Ok(hits as f64 / n as f64)
}

/// Mini-batch SGD on any [`Objective`]. `η = 0` is allowed and leaves the model unchanged.
pub fn sgd<O: Objective>(obj: &O, model: &ModelParams, cfg: &TrainingConfig, seed: u64) -> Result<ModelParams> {
    if model.len() != obj.dim() {
        return Err(Error::shape(obj.dim(), model.len()));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::domain("learning_rate must be finite and >= 0"));
    }
    if cfg.local_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::domain("local_epochs and batch_size must be >= 1"));
    }
    let n = obj.num_samples();
    if n == 0 {
        return Err(Error::domain("dataset is empty"));
    }
    let mut w = model.as_slice().to_vec();
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let g = obj.batch_grad(&w, batch);
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= cfg.learning_rate * gi;
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after epoch {epoch}, step {step}"
                )));
            }
        }
    }
    Ok(ModelParams { weights: w })
}

/// Local training of a softmax model on one user's data.
pub fn local_sgd_update(model: &ModelParams, data: &UserDataset, cfg: &TrainingConfig, seed: u64) -> Result<ModelParams> {
    let obj = SoftmaxObjective::new(data);
    obj.check(model)?;
    sgd(&obj, model, cfg, seed)
}

/// `Σ β_i/Σβ · w_i`, accumulated as offsets from the first update.
///
/// Writing it as `w_1 + Σ β_i/Σβ (w_i − w_1)` keeps identical updates exact.
pub fn fedavg_aggregate(updates: &[(ModelParams, f64)]) -> Result<ModelParams> {
    let (first, _) = updates.first().ok_or_else(|| Error::domain("no updates to aggregate"))?;
    let dim = first.len();
    let mut total = 0.0;
    for (m, beta) in updates {
        if m.len() != dim {
            return Err(Error::shape(dim, m.len()));
        }
        if !(*beta >= 0.0) || !beta.is_finite() {
            return Err(Error::domain(format!("aggregation weight {beta} is not finite and >= 0")));
        }
        total += beta;
    }
    if !(total > 0.0) {
        return Err(Error::domain("aggregation weights sum to zero"));
    }
    let base = first.as_slice();
    let mut out = base.to_vec();
    for (m, beta) in &updates[1..] {
        let s = beta / total;
        for ((o, a), b) in out.iter_mut().zip(m.as_slice()).zip(base) {
            *o += s * (a - b);
        }
    }
    ModelParams::new(out)
}

/// One FedAvg round: every client trains from `global`, then updates are averaged by sample count.
///
/// Local updates run under `exec`; the reduction is sequential in client order.
pub fn federated_round(
    global: &ModelParams,
    clients: &[&UserDataset],
    seeds: &[u64],
    cfg: &TrainingConfig,
    exec: Execution,
) -> Result<ModelParams> {
    if clients.len() != seeds.len() {
        return Err(Error::shape(clients.len(), seeds.len()));
    }
    if clients.is_empty() {
        return Ok(global.clone());
    }
    let updates = exec
        .map_range(clients.len(), |i| local_sgd_update(global, clients[i], cfg, seeds[i]))
        .into_iter()
        .zip(clients)
        .map(|(u, d)| u.map(|m| (m, d.len() as f64)))
        .collect::<Result<Vec<_>>>()?;
    fedavg_aggregate(&updates)
}

/// Centred moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn random_data(n: usize, d: usize, c: usize, seed: u64) -> UserDataset {
        let mut rng = rng_from(seed);
        let features = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        UserDataset::new(d, features, labels, c).unwrap()
    }

    fn random_model(dim: usize, seed: u64) -> ModelParams {
        let mut rng = rng_from(seed);
        ModelParams::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_model_costs_ln_c() {
        let data = random_data(7, 3, 4, 1);
        let l = local_loss(&ModelParams::zeros(softmax_dim(3, 4)), &data).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let data = UserDataset::new(1, vec![1.0], vec![1], 2).unwrap();
        let mut w = vec![0.0; softmax_dim(1, 2)];
        w[2] = 50.0;
        let l = local_loss(&ModelParams::new(w).unwrap(), &data).unwrap();
        assert!(l >= 0.0 && l < 1e-20);
    }

    #[test]
    fn loss_matches_naive_loop() {
        for seed in 0..20 {
            let data = random_data(9, 4, 3, seed);
            let m = random_model(softmax_dim(4, 3), seed + 100);
            let w = m.as_slice();
            let mut naive = 0.0;
            for k in 0..data.len() {
                let x = data.row(k);
                let mut z = [0.0; 3];
                for (c, zc) in z.iter_mut().enumerate() {
                    for j in 0..4 {
                        *zc += w[c * 5 + j] * x[j];
                    }
                    *zc += w[c * 5 + 4];
                }
                let denom: f64 = z.iter().map(|v| v.exp()).sum();
                naive += -(z[data.label(k)].exp() / denom).ln();
            }
            naive /= data.len() as f64;
            assert!((local_loss(&m, &data).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_and_empty_errors() {
        let data = random_data(3, 2, 2, 0);
        assert!(matches!(local_loss(&ModelParams::zeros(5), &data), Err(Error::Shape { .. })));
        let empty = UserDataset::new(2, vec![], vec![], 2).unwrap();
        assert!(matches!(
            local_loss(&ModelParams::zeros(6), &empty),
            Err(Error::Domain(_))
        ));
        assert!(ModelParams::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_gradient_matches_central_differences() {
        let data = random_data(8, 5, 3, 3);
        let obj = SoftmaxObjective::new(&data);
        let m = random_model(obj.dim(), 4);
        let g = obj.grad(m.as_slice());
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..obj.dim() {
            let mut a = m.as_slice().to_vec();
            let mut b = a.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (obj.loss(&a) - obj.loss(&b)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn zero_rate_is_identity() {
        let data = random_data(10, 2, 3, 5);
        let m = random_model(softmax_dim(2, 3), 6);
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            local_epochs: 3,
            batch_size: 4,
            rounds: 1,
        };
        assert_eq!(local_sgd_update(&m, &data, &cfg, 1).unwrap(), m);
    }

    #[test]
    fn quadratic_full_batch_step_is_closed_form() {
        let obj = QuadraticObjective {
            centers: vec![vec![1.0, -2.0, 0.5]],
        };
        let w = ModelParams::new(vec![3.0, 1.0, -1.0]).unwrap();
        let cfg = TrainingConfig {
            learning_rate: 0.3,
            local_epochs: 1,
            batch_size: 1,
            rounds: 1,
        };
        let out = sgd(&obj, &w, &cfg, 9).unwrap();
        for ((o, a), c) in out.as_slice().iter().zip(w.as_slice()).zip(&obj.centers[0]) {
            assert_eq!(*o, a - 0.3 * (a - c));
        }
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let data = random_data(30, 3, 3, 7);
        let m = ModelParams::zeros(softmax_dim(3, 3));
        let cfg = TrainingConfig::default();
        let a = local_sgd_update(&m, &data, &cfg, 11).unwrap();
        assert_eq!(a, local_sgd_update(&m, &data, &cfg, 11).unwrap());
        assert_ne!(a, local_sgd_update(&m, &data, &cfg, 12).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let obj = QuadraticObjective {
            centers: vec![vec![0.0]],
        };
        let cfg = TrainingConfig {
            learning_rate: 1e200,
            local_epochs: 3,
            batch_size: 1,
            rounds: 1,
        };
        let r = sgd(&obj, &ModelParams::new(vec![1e200]).unwrap(), &cfg, 0);
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn fedavg_examples() {
        let a = ModelParams::new(vec![0.1, 0.7, -3.3]).unwrap();
        assert_eq!(fedavg_aggregate(&[(a.clone(), 2.0), (a.clone(), 5.0), (a.clone(), 0.5)]).unwrap(), a);
        let b = ModelParams::new(vec![1.0, 2.0, 5.0]).unwrap();
        let out = fedavg_aggregate(&[(a.clone(), 1.0), (b.clone(), 3.0)]).unwrap();
        for ((o, x), y) in out.as_slice().iter().zip(a.as_slice()).zip(b.as_slice()) {
            assert!((o - (0.25 * x + 0.75 * y)).abs() < 1e-15);
        }
        assert!(matches!(
            fedavg_aggregate(&[(a.clone(), 1.0), (ModelParams::zeros(2), 1.0)]),
            Err(Error::Shape { .. })
        ));
        assert!(fedavg_aggregate(&[(a, 0.0)]).is_err());
        assert!(fedavg_aggregate(&[]).is_err());
    }

    #[test]
    fn global_loss_weights_by_sample_count() {
        let ds = vec![random_data(4, 2, 2, 1), random_data(12, 2, 2, 2)];
        let m = random_model(softmax_dim(2, 2), 3);
        let f: Vec<f64> = ds.iter().map(|d| local_loss(&m, d).unwrap()).collect();
        let g = global_loss(&ds, &m, &[0, 1]).unwrap();
        assert!((g - (0.25 * f[0] + 0.75 * f[1])).abs() < 1e-12);
        assert_eq!(global_loss(&ds, &m, &[1]).unwrap(), f[1]);
        assert!(global_loss(&ds, &m, &[]).is_err());
    }

    #[test]
    fn moving_average_window_five() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = moving_average(&v, 5);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[2], 3.0);
        assert_eq!(s[3], 4.0);
        assert_eq!(s[5], 5.0);
        assert_eq!(moving_average(&[], 5), Vec::<f64>::new());
    }
}
