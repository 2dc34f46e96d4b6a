use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, silhouette, KMeansOptions};
use super::{build_similarity, eigengaps, ratiocut_quadratic_form, select_num_clusters, smallest_eigenpairs};
use super::{ClusterAssignment, SpectralEmbedding};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{norm, sq_dist, Matrix};
use crate::seed::derive;

/// Kernel bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median distance to the `⌈ln n⌉`-th nearest neighbour.
    #[default]
    KnnMedian,
    /// Median of all pairwise distances.
    MedianPairwise,
    Fixed(f64),
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl BandwidthRule {
    /// Resolves the rule on `points`; zero spread falls back to 1.
    pub fn resolve<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<f64> {
        let n = points.len();
        let dist = |i: usize, j: usize| sq_dist(points[i].as_ref(), points[j].as_ref()).sqrt();
        let s = match *self {
            BandwidthRule::Fixed(s) => {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::domain(format!("bandwidth must be finite and > 0, got {s}")));
                }
                return Ok(s);
            }
            BandwidthRule::MedianPairwise => {
                median((0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).collect())
            }
            BandwidthRule::KnnMedian => {
                let k = ((n as f64).ln().ceil() as usize).clamp(1, n - 1);
                let kth = (0..n)
                    .map(|i| {
                        let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(i, j)).collect();
                        d.sort_by(f64::total_cmp);
                        d[k - 1]
                    })
                    .collect();
                let s = median(kth);
                if s > 0.0 {
                    s
                } else {
                    BandwidthRule::MedianPairwise.resolve(points)?
                }
            }
        };
        Ok(if s > 0.0 && s.is_finite() { s } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralOptions {
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    /// Multiplier applied to data-driven bandwidths.
    #[serde(default = "default_scale")]
    pub bandwidth_scale: f64,
    #[serde(default = "one")]
    pub z_min: usize,
    #[serde(default = "default_z_max")]
    pub z_max: usize,
    #[serde(default)]
    pub z_override: Option<usize>,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_max_iters: usize,
    /// Fall back to silhouette search when the top gap is within this
    /// fraction of the runner-up.
    #[serde(default = "default_margin")]
    pub gap_margin: f64,
}

fn default_scale() -> f64 {
    3.0
}
fn one() -> usize {
    1
}
fn default_z_max() -> usize {
    8
}
fn default_restarts() -> usize {
    20
}
fn default_kmeans_iters() -> usize {
    200
}
fn default_margin() -> f64 {
    0.1
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthRule::default(),
            bandwidth_scale: default_scale(),
            z_min: 1,
            z_max: default_z_max(),
            z_override: None,
            kmeans_restarts: 20,
            kmeans_max_iters: 200,
            gap_margin: 0.1,
        }
    }
}

impl SpectralOptions {
    fn kmeans(&self) -> KMeansOptions {
        KMeansOptions { restarts: self.kmeans_restarts, max_iters: self.kmeans_max_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMethod {
    Eigengap,
    Silhouette,
    Override,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSelection {
    pub z: usize,
    pub method: ZMethod,
    /// `λ_{z+1} − λ_z` for every `z` in the search window.
    pub gaps: Vec<f64>,
    /// Silhouette per candidate when the fallback ran.
    pub silhouettes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub assignment: ClusterAssignment,
    pub embedding: SpectralEmbedding,
    pub selection: ZSelection,
    pub bandwidth: f64,
    pub ratiocut: f64,
    /// All input points coincide.
    pub degenerate: bool,
    /// Embedding rows of zero length (left unnormalised).
    pub zero_rows: usize,
}

fn row_normalized(a: &Matrix) -> (Matrix, usize) {
    let mut out = a.clone();
    let mut zero = 0;
    for i in 0..a.rows() {
        let r = norm(a.row(i));
        if r > 1e-300 {
            for j in 0..a.cols() {
                out[(i, j)] /= r;
            }
        } else {
            zero += 1;
        }
    }
    (out, zero)
}

/// Graph → Laplacian → `Z` → row-normalised embedding → k-means.
pub fn spectral_cluster<P: AsRef<[f64]>>(
    points: &[P],
    opts: &SpectralOptions,
    seed: u64,
    exec: Execution,
) -> Result<SpectralResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::domain("spectral clustering needs at least two points"));
    }
    let bandwidth = match opts.bandwidth {
        BandwidthRule::Fixed(_) => opts.bandwidth.resolve(points)?,
        rule => {
            if !(opts.bandwidth_scale > 0.0) || !opts.bandwidth_scale.is_finite() {
                return Err(Error::domain("bandwidth_scale must be finite and > 0"));
            }
            rule.resolve(points)? * opts.bandwidth_scale
        }
    };
    let graph = build_similarity(points, bandwidth)?;
    let full = smallest_eigenpairs(graph.laplacian(), n)?;
    let degenerate = (0..n).all(|i| sq_dist(points[i].as_ref(), points[0].as_ref()) == 0.0);

    let z_max = opts.z_max.min(n - 1);
    let z_min = opts.z_min.min(z_max).max(1);
    let window_gaps: Vec<f64> = eigengaps(&full.spectrum)[z_min - 1..z_max].to_vec();
    let mut selection = ZSelection { z: 1, method: ZMethod::Degenerate, gaps: window_gaps.clone(), silhouettes: vec![] };
    if degenerate {
        // nothing to separate
    } else if let Some(z) = opts.z_override {
        if z == 0 || z > n {
            return Err(Error::domain(format!("z_override must lie in 1..={n}, got {z}")));
        }
        selection.z = z;
        selection.method = ZMethod::Override;
    } else {
        selection.z = select_num_clusters(&full.spectrum, z_min, z_max)?;
        selection.method = ZMethod::Eigengap;
        let mut sorted = window_gaps.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.len() >= 2 && sorted[0] <= (1.0 + opts.gap_margin) * sorted[1] {
            let scores = exec.map_range(z_max - z_min + 1, |off| {
                let z = z_min + off;
                let (emb, _) = row_normalized(&full.truncated(z).vectors);
                let s = kmeans(&emb, z, opts.kmeans(), derive(seed, &[z as u64]), Execution::Sequential)
                    .and_then(|km| silhouette(&emb, &km.labels));
                s.map(|s| (z, s))
            });
            let scores: Vec<(usize, f64)> = scores.into_iter().collect::<Result<_>>()?;
            let best = scores.iter().fold(scores[0], |b, &c| if c.1 > b.1 { c } else { b });
            selection.z = best.0;
            selection.method = ZMethod::Silhouette;
            selection.silhouettes = scores;
        }
    }

    let embedding = full.truncated(selection.z);
    let (features, zero_rows) = row_normalized(&embedding.vectors);
    let labels = if selection.z == 1 {
        vec![0; n]
    } else {
        kmeans(&features, selection.z, opts.kmeans(), derive(seed, &[selection.z as u64]), exec)?.labels
    };
    let ratiocut = ratiocut_quadratic_form(&graph, &embedding)?;
    Ok(SpectralResult {
        assignment: ClusterAssignment::new(labels)?,
        embedding,
        selection,
        bandwidth,
        ratiocut,
        degenerate,
        zero_rows,
    })
}
