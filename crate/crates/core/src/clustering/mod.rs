//! Spectral clustering of users on their estimated concentration vectors.
//!
//! Gaussian-kernel similarity graph, unnormalised Laplacian `L = D − W`,
//! the eigenvectors of the `Z` smallest eigenvalues as an embedding, and
//! k-means on the row-normalised embedding.

mod kmeans;
mod spectral;

pub use kmeans::{adjusted_rand_index, kmeans, silhouette, KMeansOptions, KMeansResult};
pub use spectral::{spectral_cluster, BandwidthRule, SpectralOptions, SpectralResult, ZMethod, ZSelection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, sq_dist, Matrix};

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    weights: Matrix,
    degrees: Vec<f64>,
    laplacian: Matrix,
}

impl SimilarityGraph {
    /// Validates `w` (symmetric, zero diagonal, non-negative) and forms `L`.
    pub fn from_weights(w: Matrix) -> Result<Self> {
        let laplacian = graph_laplacian(&w)?;
        let n = w.rows();
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::Invariant(format!("non-zero diagonal weight at {i}")));
            }
            if let Some(j) = (0..n).find(|&j| !(w[(i, j)] >= 0.0)) {
                return Err(Error::Invariant(format!("negative or NaN weight at ({i},{j})")));
            }
        }
        let degrees = (0..n).map(|i| w.row(i).iter().sum()).collect();
        Ok(Self { weights: w, degrees, laplacian })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }
}

/// `w_ij = exp(−‖x_i − x_j‖² / (2σ²))`, `w_ii = 0`.
pub fn build_similarity<P: AsRef<[f64]>>(points: &[P], bandwidth: f64) -> Result<SimilarityGraph> {
    if points.len() < 2 {
        return Err(Error::domain("need at least two points"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::domain(format!("bandwidth must be finite and > 0, got {bandwidth}")));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::shape(dim, p.as_ref().len()));
    }
    let n = points.len();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (-sq_dist(points[i].as_ref(), points[j].as_ref()) / denom).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    SimilarityGraph::from_weights(w)
}

/// `L = D − W`. Errors on a non-square or asymmetric `W`.
pub fn graph_laplacian(w: &Matrix) -> Result<Matrix> {
    if !w.is_square() {
        return Err(Error::shape(w.rows(), w.cols()));
    }
    if w.max_asymmetry() > 1e-12 * w.norm().max(1.0) {
        return Err(Error::Invariant("weight matrix is not symmetric".into()));
    }
    let n = w.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let mut d = 0.0;
        for j in 0..n {
            if i != j {
                l[(i, j)] = -w[(i, j)];
                d += w[(i, j)];
            }
        }
        l[(i, i)] = d;
    }
    Ok(l)
}

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// n × Z, orthonormal columns.
    pub vectors: Matrix,
    /// The Z retained eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Full ascending spectrum of `L`.
    pub spectrum: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn num_vectors(&self) -> usize {
        self.vectors.cols()
    }

    /// Drops to the first `z` eigenvectors.
    pub fn truncated(&self, z: usize) -> Self {
        let cols: Vec<usize> = (0..z.min(self.num_vectors())).collect();
        Self {
            vectors: self.vectors.select_cols(&cols),
            eigenvalues: self.spectrum[..cols.len()].to_vec(),
            spectrum: self.spectrum.clone(),
        }
    }

    /// Largest deviation of `AᵀA` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.vectors)
    }
}

pub(crate) fn orthonormality_error(a: &Matrix) -> f64 {
    let g = a.transpose().matmul(a).expect("square product");
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - want).abs());
        }
    }
    worst
}

/// Eigenvectors of the `z` smallest eigenvalues of a symmetric PSD matrix.
pub fn smallest_eigenpairs(l: &Matrix, z: usize) -> Result<SpectralEmbedding> {
    if z == 0 || z > l.rows() {
        return Err(Error::domain(format!("Z must lie in 1..={}, got {z}", l.rows())));
    }
    let e = jacobi_eigen(l)?;
    let cols: Vec<usize> = (0..z).collect();
    Ok(SpectralEmbedding {
        vectors: e.vectors.select_cols(&cols),
        eigenvalues: e.values[..z].to_vec(),
        spectrum: e.values,
    })
}

/// Eigengaps `λ_{z+1} − λ_z` for `z = 1..n−1` (1-based `z`).
pub fn eigengaps(eigenvalues: &[f64]) -> Vec<f64> {
    eigenvalues.windows(2).map(|w| w[1] - w[0]).collect()
}

fn check_window(n: usize, z_min: usize, z_max: usize) -> Result<()> {
    if z_min < 1 || z_min > z_max || z_max >= n {
        return Err(Error::domain(format!(
            "cluster window [{z_min}, {z_max}] invalid for {n} eigenvalues"
        )));
    }
    Ok(())
}

/// `argmax_{z ∈ [z_min, z_max]} (λ_{z+1} − λ_z)` on ascending eigenvalues,
/// ties toward the smaller `z`.
pub fn select_num_clusters(eigenvalues: &[f64], z_min: usize, z_max: usize) -> Result<usize> {
    check_window(eigenvalues.len(), z_min, z_max)?;
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("eigenvalues must be sorted ascending"));
    }
    let gaps = eigengaps(eigenvalues);
    let mut best = z_min;
    for z in z_min..=z_max {
        if gaps[z - 1] > gaps[best - 1] {
            best = z;
        }
    }
    Ok(best)
}

/// `C_s Σ_z Σ_{i≠j} w_ij (a_zi − a_zj)²` with `C_s = 1/(2n(n−1))`.
pub fn ratiocut_objective(graph: &SimilarityGraph, embedding: &SpectralEmbedding) -> Result<f64> {
    let a = &embedding.vectors;
    let n = graph.len();
    if a.rows() != n {
        return Err(Error::shape(n, a.rows()));
    }
    if embedding.orthonormality_error() > 1e-8 {
        return Err(Error::Invariant("embedding columns are not orthonormal".into()));
    }
    let cs = ratiocut_scale(n);
    let w = graph.weights();
    let mut total = 0.0;
    for z in 0..a.cols() {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = a[(i, z)] - a[(j, z)];
                    total += w[(i, j)] * d * d;
                }
            }
        }
    }
    Ok(cs * total)
}

/// `2 C_s Σ_z a_zᵀ L a_z`, identical to [`ratiocut_objective`].
pub fn ratiocut_quadratic_form(graph: &SimilarityGraph, embedding: &SpectralEmbedding) -> Result<f64> {
    let a = &embedding.vectors;
    let mut total = 0.0;
    for z in 0..a.cols() {
        let col = a.col(z);
        let lv = graph.laplacian().matvec(&col)?;
        total += crate::linalg::dot(&col, &lv);
    }
    Ok(2.0 * ratiocut_scale(graph.len()) * total)
}

fn ratiocut_scale(n: usize) -> f64 {
    1.0 / (2.0 * n as f64 * (n as f64 - 1.0))
}

/// `2Z·√2·κ_s·√(ln(2/δ)) / √n`.
pub fn excess_risk_bound(z: usize, n: usize, kappa_s: f64, delta: f64) -> Result<f64> {
    if z == 0 || n == 0 {
        return Err(Error::domain("Z and n must be >= 1"));
    }
    if !(kappa_s > 0.0) || !kappa_s.is_finite() {
        return Err(Error::domain("kappa_s must be finite and > 0"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("delta must lie in (0, 1)"));
    }
    Ok(2.0 * z as f64 * std::f64::consts::SQRT_2 * kappa_s * (2.0 / delta).ln().sqrt() / (n as f64).sqrt())
}

/// Cluster ids `0..Z` per user, every cluster non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Relabels clusters in order of first appearance.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("assignment needs at least one user"));
        }
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = labels
            .into_iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Ok(Self { num_clusters: map.len(), labels })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0; n])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_weights(sizes: &[usize]) -> Matrix {
        let n: usize = sizes.iter().sum();
        let mut block = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            block.extend(std::iter::repeat_n(b, s));
        }
        Matrix::from_fn(n, n, |i, j| if i != j && block[i] == block[j] { 0.5 + 0.1 * ((i + j) % 3) as f64 } else { 0.0 })
    }

    #[test]
    fn kernel_examples() {
        let g = build_similarity(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], 0.3).unwrap();
        assert_eq!(g.weights()[(0, 1)], 1.0);
        assert_eq!(g.weights()[(0, 0)], 0.0);
        let s = 0.7;
        let g = build_similarity(&[vec![0.0], vec![s * 2f64.sqrt()]], s).unwrap();
        assert!((g.weights()[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        let g = build_similarity(&[vec![0.0], vec![1.0]], 1e-3).unwrap();
        assert_eq!(g.weights()[(0, 1)], 0.0);
        assert!(build_similarity(&[vec![0.0], vec![1.0, 2.0]], 1.0).is_err());
        assert!(build_similarity(&[vec![0.0], vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(graph_laplacian(&Matrix::zeros(3, 3)).unwrap(), Matrix::zeros(3, 3));
        let w = Matrix::from_rows(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = smallest_eigenpairs(&graph_laplacian(&w).unwrap(), 2).unwrap();
        assert!(e.eigenvalues[0].abs() < 1e-14 && (e.eigenvalues[1] - 2.0).abs() < 1e-14);
        let v = e.vectors.col(0);
        assert!((v[0] - v[1]).abs() < 1e-12);
        let asym = Matrix::from_rows(2, 2, vec![0.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(matches!(graph_laplacian(&asym), Err(Error::Invariant(_))));
    }

    #[test]
    fn components_give_zero_eigenvalues() {
        let g = SimilarityGraph::from_weights(block_weights(&[4, 3, 5])).unwrap();
        let e = smallest_eigenpairs(g.laplacian(), 12).unwrap();
        assert_eq!(e.spectrum.iter().filter(|v| v.abs() < 1e-10).count(), 3);
        assert_eq!(select_num_clusters(&e.spectrum, 1, 8).unwrap(), 3);
        let zero_space = e.truncated(3);
        assert!(ratiocut_objective(&g, &zero_space).unwrap().abs() < 1e-12);
    }

    #[test]
    fn eigengap_examples() {
        assert_eq!(select_num_clusters(&[0.0, 0.01, 0.02, 5.0, 5.1], 1, 4).unwrap(), 3);
        assert_eq!(select_num_clusters(&[0.0, 1.0, 2.0, 3.0], 1, 3).unwrap(), 1);
        assert!(select_num_clusters(&[0.0, 1.0], 1, 2).is_err());
        assert!(select_num_clusters(&[0.0, 1.0, 2.0], 0, 1).is_err());
        assert!(select_num_clusters(&[1.0, 0.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn z_window_checked() {
        assert!(smallest_eigenpairs(&Matrix::zeros(3, 3), 4).is_err());
        assert!(smallest_eigenpairs(&Matrix::zeros(3, 3), 0).is_err());
        let e = smallest_eigenpairs(&Matrix::zeros(3, 3), 3).unwrap();
        assert!(e.orthonormality_error() < 1e-12);
    }

    #[test]
    fn two_node_ratiocut() {
        let g = SimilarityGraph::from_weights(Matrix::from_rows(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let emb = SpectralEmbedding {
            vectors: Matrix::from_rows(2, 1, vec![h, h]).unwrap(),
            eigenvalues: vec![0.0],
            spectrum: vec![0.0, 2.0],
        };
        assert!(ratiocut_objective(&g, &emb).unwrap().abs() < 1e-15);
        let bad = SpectralEmbedding { vectors: Matrix::from_rows(2, 1, vec![1.0, 1.0]).unwrap(), ..emb };
        assert!(matches!(ratiocut_objective(&g, &bad), Err(Error::Invariant(_))));
    }

    #[test]
    fn excess_risk_scaling() {
        let b = excess_risk_bound(3, 100, 1.0, 0.05).unwrap();
        assert_eq!(excess_risk_bound(6, 100, 1.0, 0.05).unwrap(), 2.0 * b);
        assert!((excess_risk_bound(3, 400, 1.0, 0.05).unwrap() - b / 2.0).abs() < 1e-15);
        assert!(excess_risk_bound(0, 1, 1.0, 0.5).is_err());
        assert!(excess_risk_bound(1, 1, -1.0, 0.5).is_err());
        assert!(excess_risk_bound(1, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn assignment_relabels() {
        let a = ClusterAssignment::new(vec![7, 7, 2, 9, 2]).unwrap();
        assert_eq!(a.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(a.num_clusters(), 3);
        assert_eq!(a.members(1), vec![2, 4]);
    }
}
