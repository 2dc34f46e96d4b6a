use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{sq_dist, Matrix};
use crate::seed::{derive, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 20, max_iters: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// WCSS after each Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
    pub best_restart: usize,
}

fn wcss(points: &Matrix, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    (0..points.rows()).map(|i| sq_dist(points.row(i), &centroids[labels[i]])).sum()
}

fn plus_plus_seed<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &Matrix, centroids: &[Vec<f64>]) -> Vec<usize> {
    (0..points.rows())
        .map(|i| {
            let row = points.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(row, cen);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn lloyd(points: &Matrix, k: usize, max_iters: usize, seed: u64) -> KMeansResult {
    let mut rng = rng_from(seed);
    let dim = points.cols();
    let mut centroids = plus_plus_seed(points, k, &mut rng);
    let mut labels = assign(points, &centroids);
    let mut trace = vec![wcss(points, &labels, &centroids)];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // an empty cluster takes the point currently worst served
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.rows())
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), &centroids[labels[a]])
                            .total_cmp(&sq_dist(points.row(b), &centroids[labels[b]]))
                    })
                    .expect("non-empty");
                centroids[c] = points.row(far).to_vec();
                labels[far] = c;
            }
        }
        let next = assign(points, &centroids);
        let changed = next != labels;
        labels = next;
        trace.push(wcss(points, &labels, &centroids));
        if !changed {
            break;
        }
    }
    let wcss = *trace.last().expect("non-empty");
    KMeansResult { labels, centroids, wcss, trace, best_restart: 0 }
}

/// k-means++ seeding and Lloyd iterations, best of `restarts` by WCSS.
///
/// Restart `r` uses the seed derived from `(seed, r)`; ties go to the lower
/// restart index, so the result does not depend on the execution policy.
pub fn kmeans(points: &Matrix, k: usize, opts: KMeansOptions, seed: u64, exec: Execution) -> Result<KMeansResult> {
    if k == 0 || k > points.rows() {
        return Err(Error::domain(format!("k must lie in 1..={}, got {k}", points.rows())));
    }
    if opts.restarts == 0 || opts.max_iters == 0 {
        return Err(Error::domain("k-means needs restarts >= 1 and max_iters >= 1"));
    }
    let runs = exec.map_range(opts.restarts, |r| lloyd(points, k, opts.max_iters, derive(seed, &[r as u64])));
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.wcss < a.1.wcss { b } else { a })
        .expect("restarts >= 1");
    Ok(KMeansResult { best_restart, ..best })
}

/// Mean silhouette coefficient. Singleton clusters score 0; one cluster scores 0.
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::shape(n, labels.len()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Ok(0.0);
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-300 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
