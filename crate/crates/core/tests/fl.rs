use cfl_noma::dirichlet::UserDataset;
use cfl_noma::fl::{
    convergence_bound_rhs, fedavg_aggregate, federated_round, global_loss, local_loss, local_sgd_update,
    run_quadratic_toy, sgd, softmax_dim, ConvergenceParams, ModelParams, Objective, QuadraticObjective,
    QuadraticToy, SoftmaxObjective, TrainingConfig,
};
use cfl_noma::seed::rng_from;
use cfl_noma::Execution;
use proptest::prelude::*;
use rand::Rng;

fn random_data(n: usize, d: usize, c: usize, seed: u64) -> UserDataset {
    let mut rng = rng_from(seed);
    let features = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    UserDataset::new(d, features, labels, c).unwrap()
}

fn random_model(dim: usize, scale: f64, seed: u64) -> ModelParams {
    let mut rng = rng_from(seed);
    ModelParams::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn max_relative_fd_error<O: Objective>(obj: &O, w: &[f64]) -> f64 {
    let g = obj.grad(w);
    let h = 1e-5;
    (0..w.len())
        .map(|j| {
            let mut a = w.to_vec();
            let mut b = w.to_vec();
            a[j] += h;
            b[j] -= h;
            let fd = (obj.loss(&a) - obj.loss(&b)) / (2.0 * h);
            (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}

#[test]
fn softmax_gradient_over_random_cases() {
    let mut worst: f64 = 0.0;
    for case in 0..120u64 {
        let d = 1 + (case % 6) as usize;
        let c = 2 + (case % 4) as usize;
        let data = random_data(8, d, c, case);
        let obj = SoftmaxObjective::new(&data);
        let w = random_model(obj.dim(), 1.0, 1000 + case);
        worst = worst.max(max_relative_fd_error(&obj, w.as_slice()));
    }
    assert!(worst <= 1e-4, "worst relative deviation {worst}");
}

#[test]
fn five_dim_softmax_gradient_check() {
    let data = random_data(8, 5, 3, 77);
    let obj = SoftmaxObjective::new(&data);
    let w = random_model(obj.dim(), 0.5, 78);
    assert!(max_relative_fd_error(&obj, w.as_slice()) <= 1e-4);
}

#[test]
fn fedavg_of_full_gradient_steps_is_a_centralised_step() {
    let d = 4;
    let c = 3;
    let clients: Vec<UserDataset> = (0..5).map(|i| random_data(10, d, c, 50 + i)).collect();
    let w0 = random_model(softmax_dim(d, c), 0.3, 9);
    let cfg = TrainingConfig {
        learning_rate: 0.2,
        local_epochs: 1,
        batch_size: 10,
        rounds: 1,
    };
    let refs: Vec<&UserDataset> = clients.iter().collect();
    let seeds = vec![0u64; clients.len()];
    let fed = federated_round(&w0, &refs, &seeds, &cfg, Execution::Parallel).unwrap();

    // Equal β, so the global gradient is the mean of local gradients.
    let mut grad = vec![0.0; w0.len()];
    for data in &clients {
        let g = SoftmaxObjective::new(data).grad(w0.as_slice());
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / clients.len() as f64;
        }
    }
    for ((f, w), g) in fed.as_slice().iter().zip(w0.as_slice()).zip(&grad) {
        assert!((f - (w - 0.2 * g)).abs() <= 1e-10);
    }
}

#[test]
fn execution_policies_give_identical_rounds() {
    let clients: Vec<UserDataset> = (0..6).map(|i| random_data(25, 3, 4, 300 + i)).collect();
    let refs: Vec<&UserDataset> = clients.iter().collect();
    let seeds: Vec<u64> = (0..6).collect();
    let cfg = TrainingConfig {
        learning_rate: 0.1,
        local_epochs: 2,
        batch_size: 4,
        rounds: 1,
    };
    let mut a = ModelParams::zeros(softmax_dim(3, 4));
    let mut b = a.clone();
    for _ in 0..3 {
        a = federated_round(&a, &refs, &seeds, &cfg, Execution::Sequential).unwrap();
        b = federated_round(&b, &refs, &seeds, &cfg, Execution::Parallel).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn local_update_reduces_loss_on_separable_data() {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..40 {
        let y = k % 2;
        features.push(if y == 0 { -1.0 } else { 1.0 } + 0.01 * k as f64);
        labels.push(y);
    }
    let data = UserDataset::new(1, features, labels, 2).unwrap();
    let w0 = ModelParams::zeros(softmax_dim(1, 2));
    let cfg = TrainingConfig {
        learning_rate: 0.5,
        local_epochs: 5,
        batch_size: 8,
        rounds: 1,
    };
    let w1 = local_sgd_update(&w0, &data, &cfg, 3).unwrap();
    assert!(local_loss(&w1, &data).unwrap() < local_loss(&w0, &data).unwrap());
}

#[test]
fn quadratic_toy_harness() {
    let toy = QuadraticToy::default();
    let mut printed_violations = 0;
    let mut rounds = 0;
    for seed in 0..20 {
        let trace = run_quadratic_toy(&toy, seed).unwrap();
        assert_eq!(trace.gaps.len(), toy.rounds + 1);
        assert_eq!(trace.warnings, 0);
        for t in 0..toy.rounds {
            let gap = trace.gaps[t + 1];
            assert!(
                gap <= trace.penalised_bounds[t],
                "seed {seed} round {}: gap {gap} above {}",
                t + 1,
                trace.penalised_bounds[t]
            );
            assert!((trace.penalised_bounds[t] - trace.bounds[t] - 2.0 * trace.variance_terms[t]).abs() <= 1e-12 * trace.variance_terms[t].max(1.0));
            printed_violations += usize::from(gap > trace.bounds[t] + trace.variance_terms[t]);
            rounds += 1;
        }
    }
    println!("printed-sign bound + |G-term| exceeded in {printed_violations}/{rounds} rounds");
}

#[test]
fn toy_contraction_factor_is_analytic() {
    let p = ConvergenceParams {
        lipschitz: 1.0,
        pl_constant: 1.0,
        grad_variance_bound: 0.5,
        confidence: 0.05,
        concentration_sum: 1.0,
    };
    for n in 3..10 {
        let b = convergence_bound_rhs(2.0, &p, 1.0, &vec![4.0; n]).unwrap();
        assert!((b.factor - (1.0 - 2.0 / n as f64)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_affine_equivariant(
        ws in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
        betas in prop::collection::vec(0.1f64..10.0, 6),
        shift in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let ups: Vec<(ModelParams, f64)> = ws.iter().zip(&betas).map(|(w, b)| (ModelParams::new(w.clone()).unwrap(), *b)).collect();
        let shifted: Vec<(ModelParams, f64)> = ups
            .iter()
            .map(|(m, b)| (ModelParams::new(m.as_slice().iter().zip(&shift).map(|(x, s)| x + s).collect()).unwrap(), *b))
            .collect();
        let a = fedavg_aggregate(&ups).unwrap();
        let s = fedavg_aggregate(&shifted).unwrap();
        for ((x, y), c) in a.as_slice().iter().zip(s.as_slice()).zip(&shift) {
            prop_assert!((y - x - c).abs() < 1e-9);
        }
        // Weights sum to one: aggregating a constant vector returns it.
        let ones: Vec<(ModelParams, f64)> = ups.iter().map(|(_, b)| (ModelParams::new(vec![1.0; 4]).unwrap(), *b)).collect();
        for v in fedavg_aggregate(&ones).unwrap().as_slice() {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn global_loss_is_a_convex_combination(seed in 0u64..10_000, users in 1usize..6) {
        let ds: Vec<UserDataset> = (0..users).map(|i| random_data(3 + i * 2, 3, 3, seed + i as u64)).collect();
        let m = random_model(softmax_dim(3, 3), 2.0, seed);
        let local: Vec<f64> = ds.iter().map(|d| local_loss(&m, d).unwrap()).collect();
        prop_assert!(local.iter().all(|l| *l >= 0.0));
        let sel: Vec<usize> = (0..users).collect();
        let g = global_loss(&ds, &m, &sel).unwrap();
        let lo = local.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = local.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
    }

    #[test]
    fn quadratic_gd_is_monotone(
        centers in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 2..6),
        betas in prop::collection::vec(1usize..6, 6),
        start in prop::collection::vec(-10.0f64..10.0, 3),
        lipschitz in 1.0f64..5.0,
    ) {
        // Each user's loss has identity Hessian, so any L >= 1 is a valid smoothness constant.
        let cfg = TrainingConfig { learning_rate: 1.0 / lipschitz, local_epochs: 1, batch_size: 64, rounds: 1 };
        let objs: Vec<QuadraticObjective> = centers.iter().map(|c| QuadraticObjective { centers: vec![c.clone()] }).collect();
        let global = |w: &ModelParams| -> f64 {
            let tot: f64 = (0..objs.len()).map(|i| betas[i] as f64).sum();
            (0..objs.len()).map(|i| betas[i] as f64 / tot * objs[i].loss(w.as_slice())).sum()
        };
        let mut w = ModelParams::new(start).unwrap();
        let mut prev = global(&w);
        for _ in 0..10 {
            let ups: Vec<(ModelParams, f64)> = objs.iter().enumerate().map(|(i, o)| (sgd(o, &w, &cfg, 0).unwrap(), betas[i] as f64)).collect();
            w = fedavg_aggregate(&ups).unwrap();
            let now = global(&w);
            prop_assert!(now <= prev + 1e-12);
            prev = now;
        }
    }
}
