use cfl_noma::clustering::*;
use cfl_noma::linalg::Matrix;
use cfl_noma::seed::{derive, rng_from};
use cfl_noma::Execution;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn mixture(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (g, c) in centers.iter().enumerate() {
        for _ in 0..per {
            pts.push(c.iter().map(|x| x + noise.sample(&mut rng)).collect());
            truth.push(g);
        }
    }
    (pts, truth)
}

/// Number of eigenvalues of symmetric `a` below `x`, by Sylvester inertia of
/// an LDLᵀ factorisation of `a − xI`.
fn count_below(a: &Matrix, x: f64) -> usize {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] - if i == j { x } else { 0.0 }).collect()).collect();
    let mut neg = 0;
    for k in 0..n {
        let mut d = m[k][k];
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            neg += 1;
        }
        for i in (k + 1)..n {
            let f = m[i][k] / d;
            for j in (k + 1)..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    neg
}

fn bisect_eigenvalue(a: &Matrix, index: usize, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(a, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn eigenvalues_match_inertia_oracle() {
    for seed in 0..5 {
        let mut rng = rng_from(seed);
        let w = {
            let mut w = Matrix::zeros(8, 8);
            for i in 0..8 {
                for j in (i + 1)..8 {
                    let v: f64 = rng.random_range(0.0..1.0);
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            w
        };
        let l = graph_laplacian(&w).unwrap();
        let e = smallest_eigenpairs(&l, 8).unwrap();
        let bound = l.norm() + 1.0;
        for k in 0..8 {
            let oracle = bisect_eigenvalue(&l, k, -bound, bound);
            assert!((e.spectrum[k] - oracle).abs() < 1e-8, "k={k}: {} vs {oracle}", e.spectrum[k]);
            let v = e.vectors.col(k);
            let lv = l.matvec(&v).unwrap();
            let r: f64 = lv.iter().zip(&v).map(|(a, b)| (a - e.spectrum[k] * b).powi(2)).sum::<f64>().sqrt();
            assert!(r <= 1e-8 * l.norm());
        }
    }
}

fn three_centers() -> Vec<Vec<f64>> {
    vec![vec![5.0, 1.0, 1.0], vec![1.0, 5.0, 1.0], vec![1.0, 1.0, 5.0]]
}

#[test]
fn three_center_mixture_recovered() {
    let mut hits = 0;
    let mut min_ari = f64::INFINITY;
    for seed in 0..50 {
        let (pts, truth) = mixture(&three_centers(), 10, 0.1, derive(7, &[seed]));
        let r = spectral_cluster(&pts, &SpectralOptions::default(), seed, Execution::Parallel).unwrap();
        if r.selection.z == 3 {
            hits += 1;
        }
        min_ari = min_ari.min(adjusted_rand_index(r.assignment.labels(), &truth).unwrap());
    }
    assert!(hits >= 48, "eigengap picked Z=3 on {hits}/50");
    assert!(min_ari >= 0.9, "min ARI {min_ari}");
}

#[test]
fn two_group_mixture_selects_two() {
    let centers = vec![vec![0.6, 0.2, 0.2], vec![0.2, 0.2, 0.6]];
    let hits = (0..100)
        .filter(|&seed| {
            let (pts, _) = mixture(&centers, 12, 0.03, derive(11, &[seed]));
            spectral_cluster(&pts, &SpectralOptions::default(), seed, Execution::Sequential).unwrap().selection.z == 2
        })
        .count();
    assert!(hits >= 95, "Z=2 on {hits}/100");
}

#[test]
fn policies_give_identical_clusters() {
    let (pts, _) = mixture(&three_centers(), 8, 0.3, 5);
    let a = spectral_cluster(&pts, &SpectralOptions::default(), 9, Execution::Sequential).unwrap();
    let b = spectral_cluster(&pts, &SpectralOptions::default(), 9, Execution::Parallel).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.selection, b.selection);
}

fn gram_schmidt(cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut c in cols {
        for q in &out {
            let d: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in c.iter_mut().zip(q) {
                *x -= d * y;
            }
        }
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(c.into_iter().map(|x| x / n).collect());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_psd_zero_row_sums(raw in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..12), bw in 0.1f64..3.0) {
        let g = build_similarity(&raw, bw).unwrap();
        let l = g.laplacian();
        for i in 0..l.rows() {
            prop_assert!(l.row(i).iter().sum::<f64>().abs() < 1e-9);
            for j in 0..l.rows() {
                prop_assert_eq!(g.weights()[(i, j)], g.weights()[(j, i)]);
                prop_assert!(g.weights()[(i, j)] >= 0.0);
            }
        }
        let e = smallest_eigenpairs(l, 1).unwrap();
        prop_assert!(e.spectrum[0] >= -1e-8);
    }

    #[test]
    fn ratiocut_double_sum_matches_quadratic_form(seed in 0u64..1000, z in 1usize..4) {
        let mut rng = rng_from(seed);
        let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let g = build_similarity(&pts, 0.8).unwrap();
        let cols = gram_schmidt((0..z).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect());
        let a = Matrix::from_fn(6, z, |i, j| cols[j][i]);
        let emb = SpectralEmbedding { vectors: a.clone(), eigenvalues: vec![0.0; z], spectrum: vec![0.0; 6] };
        // naive oracle written out independently
        let w = g.weights();
        let mut naive = 0.0;
        for k in 0..z { for i in 0..6 { for j in 0..6 { if i != j {
            naive += w[(i, j)] * (a[(i, k)] - a[(j, k)]).powi(2);
        }}}}
        naive /= 2.0 * 6.0 * 5.0;
        let direct = ratiocut_objective(&g, &emb).unwrap();
        let quad = ratiocut_quadratic_form(&g, &emb).unwrap();
        prop_assert!((direct - naive).abs() < 1e-10);
        prop_assert!((direct - quad).abs() < 1e-10);
    }

    #[test]
    fn labels_invariant_under_reordering(seed in 0u64..200) {
        let (pts, _) = mixture(&three_centers(), 6, 0.1, seed);
        let mut rng = rng_from(seed ^ 0xABCD);
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        for i in (1..perm.len()).rev() { perm.swap(i, rng.random_range(0..=i)); }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let a = spectral_cluster(&pts, &SpectralOptions::default(), 1, Execution::Sequential).unwrap();
        let b = spectral_cluster(&shuffled, &SpectralOptions::default(), 1, Execution::Sequential).unwrap();
        let back: Vec<usize> = {
            let mut v = vec![0; perm.len()];
            for (pos, &i) in perm.iter().enumerate() { v[i] = b.assignment.labels()[pos]; }
            v
        };
        prop_assert_eq!(adjusted_rand_index(a.assignment.labels(), &back).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_wcss_non_increasing(seed in 0u64..500) {
        let mut rng = rng_from(seed);
        let m = Matrix::from_fn(20, 2, |_, _| rng.random_range(0.0..1.0));
        let r = kmeans(&m, 3, KMeansOptions { restarts: 3, max_iters: 50 }, seed, Execution::Sequential).unwrap();
        prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn excess_risk_matches_calculator() {
    // 2*6*sqrt(2)*1*sqrt(ln 40)/10, evaluated independently in Python
    let v = excess_risk_bound(6, 100, 1.0, 0.05).unwrap();
    assert!((v - 3.259443637777487).abs() < 1e-12, "{v}");
}

