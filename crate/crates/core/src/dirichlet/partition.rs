use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ConcentrationVector, LabelHistogram};
use crate::error::{Error, Result};
use crate::seed::{rng_from, SeedTree, Stream};

/// How a population of users is partitioned.
///
/// Each user draws its class proportions from `Dirichlet(α·1_C)` unless
/// `group_priors` is non-empty; then user `i` uses prior `i mod G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_users: usize,
    pub num_classes: usize,
    pub concentration: f64,
    pub samples_per_user: Vec<usize>,
    #[serde(default)]
    pub group_priors: Vec<Vec<f64>>,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::domain("num_users must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::domain("num_classes must be >= 2"));
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return Err(Error::domain("concentration must be finite and > 0"));
        }
        if self.samples_per_user.len() != self.num_users {
            return Err(Error::shape(self.num_users, self.samples_per_user.len()));
        }
        if self.samples_per_user.contains(&0) {
            return Err(Error::domain("every user needs at least one sample"));
        }
        for g in &self.group_priors {
            ConcentrationVector::new(g.clone())?;
            if g.len() != self.num_classes {
                return Err(Error::shape(self.num_classes, g.len()));
            }
        }
        Ok(())
    }

    /// Group of user `i` (0 when no group priors are configured).
    pub fn group_of(&self, user: usize) -> usize {
        if self.group_priors.is_empty() {
            0
        } else {
            user % self.group_priors.len()
        }
    }

    fn prior_for(&self, user: usize) -> ConcentrationVector {
        if self.group_priors.is_empty() {
            ConcentrationVector::uniform(self.num_classes, self.concentration).expect("validated")
        } else {
            ConcentrationVector::new(self.group_priors[self.group_of(user)].clone()).expect("validated")
        }
    }
}

/// A labelled sample pool (row-major features).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledPool {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::shape(labels.len() * dim, features.len()));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(format!("label {y} outside 0..{num_classes}")));
        }
        Ok(Self { dim, features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by[y].push(i);
        }
        by
    }

    /// Builds a dataset from pool rows.
    pub fn gather(&self, rows: &[usize]) -> UserDataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        UserDataset::new(self.dim, features, labels, self.num_classes).expect("pool rows are consistent")
    }
}

/// One user's local training data.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    histogram: LabelHistogram,
}

impl UserDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::shape(labels.len() * dim, features.len()));
        }
        let histogram = LabelHistogram::from_labels(&labels, num_classes)?;
        Ok(Self { dim, features, labels, histogram })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.histogram.num_classes()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn histogram(&self) -> &LabelHistogram {
        &self.histogram
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub datasets: Vec<UserDataset>,
    /// Class proportions drawn for each user.
    pub proportions: Vec<Vec<f64>>,
    /// Pool rows assigned to each user.
    pub rows: Vec<Vec<usize>>,
    /// Set when some class ran out and was sampled with replacement.
    pub sampled_with_replacement: bool,
}

/// Draws `p ~ Dirichlet(α)`.
///
/// Gamma variates are generated in log-space (`G(a) = G(a+1)·U^{1/a}` for
/// `a < 1`) so tiny concentrations do not underflow to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &ConcentrationVector, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha
        .as_slice()
        .iter()
        .map(|&a| {
            if a >= 1.0 {
                Gamma::new(a, 1.0).expect("a > 0").sample(rng).ln()
            } else {
                let g = Gamma::new(a + 1.0, 1.0).expect("a > 0").sample(rng).ln();
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                g + u.ln() / a
            }
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Draws multinomial counts of `n` trials over probabilities `p`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; p.len()];
    let mut remaining = n;
    let mut mass = 1.0f64;
    for (j, &pj) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == p.len() {
            counts[j] = remaining;
            break;
        }
        let q = if mass > 0.0 { (pj / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(remaining, q).expect("q in [0,1]").sample(rng);
        counts[j] = k;
        remaining -= k;
        mass -= pj;
    }
    counts
}

/// One Multinomial-Dirichlet draw of `total` labels.
pub fn sample_md_histogram<R: Rng + ?Sized>(alpha: &ConcentrationVector, total: u64, rng: &mut R) -> LabelHistogram {
    let p = sample_dirichlet(alpha, rng);
    LabelHistogram::new(sample_multinomial(total, &p, rng)).expect("non-empty")
}

/// Partitions `pool` across users with Dirichlet-distributed label skew.
///
/// Rows are taken without replacement in user order; a class that runs out
/// is topped up by sampling with replacement and the outcome is flagged.
pub fn sample_dirichlet_partition(spec: &PartitionSpec, pool: &LabeledPool, seed: u64) -> Result<PartitionOutcome> {
    spec.validate()?;
    if pool.num_classes != spec.num_classes {
        return Err(Error::shape(spec.num_classes, pool.num_classes));
    }
    let mut by_class = pool.indices_by_class();
    if let Some(j) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::domain(format!("source pool has no samples of class {j}")));
    }
    let tree = SeedTree::new(seed);
    let mut shuffle_rng = tree.rng(Stream::Partition, &[u64::MAX]);
    for list in &mut by_class {
        list.shuffle(&mut shuffle_rng);
    }
    let mut cursor = vec![0usize; spec.num_classes];
    let mut with_replacement = false;

    let mut datasets = Vec::with_capacity(spec.num_users);
    let mut proportions = Vec::with_capacity(spec.num_users);
    let mut all_rows = Vec::with_capacity(spec.num_users);
    for user in 0..spec.num_users {
        let mut rng = rng_from(tree.seed(Stream::Partition, &[user as u64]));
        let p = sample_dirichlet(&spec.prior_for(user), &mut rng);
        let counts = sample_multinomial(spec.samples_per_user[user] as u64, &p, &mut rng);
        let mut rows = Vec::with_capacity(spec.samples_per_user[user]);
        for (j, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let list = &by_class[j];
                if cursor[j] < list.len() {
                    rows.push(list[cursor[j]]);
                    cursor[j] += 1;
                } else {
                    with_replacement = true;
                    rows.push(list[rng.random_range(0..list.len())]);
                }
            }
        }
        datasets.push(pool.gather(&rows));
        proportions.push(p);
        all_rows.push(rows);
    }
    Ok(PartitionOutcome {
        datasets,
        proportions,
        rows: all_rows,
        sampled_with_replacement: with_replacement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_pool(per_class: usize, classes: usize) -> LabeledPool {
        let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let features = labels.iter().map(|&y| y as f64).collect();
        LabeledPool::new(1, features, labels, classes).unwrap()
    }

    fn spec(n: usize, c: usize, alpha: f64, beta: usize) -> PartitionSpec {
        PartitionSpec {
            num_users: n,
            num_classes: c,
            concentration: alpha,
            samples_per_user: vec![beta; n],
            group_priors: vec![],
        }
    }

    #[test]
    fn dirichlet_samples_lie_on_simplex() {
        let mut rng = rng_from(1);
        for a in [0.001, 0.01, 0.5, 3.0, 100.0] {
            let p = sample_dirichlet(&ConcentrationVector::uniform(10, a).unwrap(), &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        }
    }

    #[test]
    fn multinomial_counts_sum() {
        let mut rng = rng_from(2);
        let c = sample_multinomial(1000, &[0.2, 0.0, 0.5, 0.3], &mut rng);
        assert_eq!(c.iter().sum::<u64>(), 1000);
        assert_eq!(c[1], 0);
    }

    #[test]
    fn large_concentration_is_near_uniform() {
        let pool = label_pool(2000, 10);
        let out = sample_dirichlet_partition(&spec(30, 10, 100.0, 50), &pool, 9).unwrap();
        let dev: f64 = out
            .proportions
            .iter()
            .flat_map(|p| p.iter().map(|x| (x - 0.1).abs() / 0.1))
            .sum::<f64>()
            / 300.0;
        assert!(dev <= 0.10, "mean relative deviation {dev}");
    }

    #[test]
    fn small_concentration_is_skewed() {
        let pool = label_pool(2000, 10);
        let out = sample_dirichlet_partition(&spec(30, 10, 0.01, 50), &pool, 9).unwrap();
        let mut active: Vec<usize> = out
            .proportions
            .iter()
            .map(|p| p.iter().filter(|x| **x > 0.01).count())
            .collect();
        active.sort_unstable();
        assert!(active[active.len() / 2] <= 2, "{active:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let pool = label_pool(200, 5);
        let s = spec(8, 5, 0.5, 20);
        let a = sample_dirichlet_partition(&s, &pool, 77).unwrap();
        let b = sample_dirichlet_partition(&s, &pool, 77).unwrap();
        assert_eq!(a, b);
        let c = sample_dirichlet_partition(&s, &pool, 78).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn histograms_match_labels_and_sizes() {
        let pool = label_pool(500, 4);
        let out = sample_dirichlet_partition(&spec(6, 4, 1.0, 33), &pool, 1).unwrap();
        assert!(!out.sampled_with_replacement);
        for d in &out.datasets {
            assert_eq!(d.len(), 33);
            assert_eq!(d.histogram(), &LabelHistogram::from_labels(d.labels(), 4).unwrap());
        }
        // without replacement: no row reused
        let mut all: Vec<usize> = out.rows.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6 * 33);
    }

    #[test]
    fn exhausted_pool_falls_back_with_flag() {
        let pool = label_pool(3, 2);
        let out = sample_dirichlet_partition(&spec(4, 2, 1.0, 10), &pool, 4).unwrap();
        assert!(out.sampled_with_replacement);
        assert!(out.datasets.iter().all(|d| d.len() == 10));
    }

    #[test]
    fn missing_class_rejected() {
        let pool = LabeledPool::new(1, vec![0.0, 0.0], vec![0, 0], 2).unwrap();
        assert!(sample_dirichlet_partition(&spec(2, 2, 1.0, 3), &pool, 0).is_err());
    }

    #[test]
    fn invalid_spec_rejected() {
        let pool = label_pool(10, 2);
        assert!(sample_dirichlet_partition(&spec(0, 2, 1.0, 3), &pool, 0).is_err());
        assert!(sample_dirichlet_partition(&spec(2, 2, -1.0, 3), &pool, 0).is_err());
        assert!(sample_dirichlet_partition(&spec(2, 2, 1.0, 0), &pool, 0).is_err());
    }
}
