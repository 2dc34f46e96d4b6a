//! Non-IID label partitions drawn from a Dirichlet prior, and maximum
//! likelihood estimation of Dirichlet concentration parameters from label
//! counts under the Multinomial-Dirichlet model.

mod estimate;
mod likelihood;
mod partition;

pub use estimate::{estimate_concentration, estimate_concentration_pooled, BfgsOptions, Estimate};
pub use likelihood::{md_log_likelihood, md_log_likelihood_grad, pooled_log_likelihood, pooled_log_likelihood_grad};
pub use partition::{
    sample_dirichlet, sample_dirichlet_partition, sample_md_histogram, sample_multinomial,
    LabeledPool, PartitionOutcome, PartitionSpec, UserDataset,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class label counts of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl LabelHistogram {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("histogram needs at least one class"));
        }
        let total = counts.iter().sum();
        Ok(Self { counts, total })
    }

    /// Counts labels in `0..num_classes`.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_classes];
        for &y in labels {
            *counts
                .get_mut(y)
                .ok_or_else(|| Error::domain(format!("label {y} outside 0..{num_classes}")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Reorders classes so that class `j` of the result is class `perm[j]` here.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&p| self.counts[p]).collect()).expect("non-empty")
    }
}

/// Strictly positive Dirichlet concentration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationVector {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl ConcentrationVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::domain("concentration vector is empty"));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::domain(format!(
                "concentration parameters must be finite and > 0, got {a}"
            )));
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    pub fn uniform(num_classes: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; num_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// The Dirichlet mean `α / α0`, a scale-free point on the simplex.
    pub fn mean(&self) -> Self {
        Self::new(self.alpha.iter().map(|a| a / self.alpha0).collect()).expect("positive")
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&p| self.alpha[p]).collect()).expect("positive")
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.alpha
    }
}

impl AsRef<[f64]> for ConcentrationVector {
    fn as_ref(&self) -> &[f64] {
        &self.alpha
    }
}
