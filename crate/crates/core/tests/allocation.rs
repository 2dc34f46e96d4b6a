use std::collections::HashMap;

use cfl_noma::allocation::*;
use cfl_noma::channel::{DeviceProfile, LinkBudget};
use cfl_noma::seed::{derive, rng_from};
use cfl_noma::Execution;
use rand::Rng;

fn device(t_com: f64, pmax: f64) -> DeviceProfile {
    DeviceProfile {
        cpu_hz: 2e9,
        samples: t_com * 2e9 / 1e7,
        cycles_per_bit: 1e7,
        energy_coeff: 1e-28,
        distance_m: 100.0,
        max_power_w: pmax,
    }
}

fn random_instance(seed: u64) -> PairInput {
    let mut rng = rng_from(seed);
    let t1: f64 = rng.random_range(0.1..3.0);
    let t2 = if rng.random_bool(0.1) { t1 } else { t1 + rng.random_range(0.0..3.0) };
    let t_max = t2 + rng.random_range(0.2..4.0);
    let log_gain = |r: &mut rand_chacha::ChaCha8Rng| 10f64.powf(r.random_range(-1.0..2.5));
    PairInput {
        first: device(t1, rng.random_range(0.2..2.0)),
        second: device(t2, rng.random_range(0.2..2.0)),
        bits_first: rng.random_range(2e5..3e6),
        bits_second: rng.random_range(2e5..3e6),
        gain_first: log_gain(&mut rng),
        gain_second: log_gain(&mut rng),
        t_max,
    }
}

fn feasible_instances(count: usize) -> Vec<PairInput> {
    let b = LinkBudget::default();
    (0u64..)
        .map(|s| random_instance(derive(99, &[s])))
        .filter(|i| kkt_power_allocate(i, &b).unwrap().feasible || power_oracle(i, &b).unwrap().feasible)
        .take(count)
        .collect()
}

#[test]
fn kkt_matches_oracle_and_passes_audit() {
    let b = LinkBudget::default();
    let mut cases: HashMap<KktCase, usize> = HashMap::new();
    for (i, input) in feasible_instances(500).iter().enumerate() {
        let k = kkt_power_allocate(input, &b).unwrap();
        let o = power_oracle(input, &b).unwrap();
        assert!(k.feasible && o.feasible, "instance {i}: kkt {} oracle {}", k.feasible, o.feasible);
        let gap = (k.energy.total() - o.energy.total()).abs() / o.energy.total();
        let tx_gap = (k.energy.transmit - o.energy.transmit).abs() / o.energy.transmit.max(1e-300);
        assert!(gap <= 1e-4 && tx_gap <= 1e-4, "instance {i}: gap {gap} transmit gap {tx_gap} ({:?})", k.kkt_case);
        assert!(k.energy.transmit <= o.energy.transmit * (1.0 + 1e-9), "instance {i}: oracle beat KKT");
        let audit = kkt_audit(input, &b, &k).unwrap();
        assert!(audit.passes(1e-6), "instance {i} {:?}: {audit:?}", k.kkt_case);
        *cases.entry(k.kkt_case).or_default() += 1;
    }
    for case in [KktCase::Interior, KktCase::P11Max, KktCase::P12Zero, KktCase::P11Zero] {
        assert!(cases.get(&case).copied().unwrap_or(0) > 0, "case {case} never exercised: {cases:?}");
    }
}

#[test]
fn kkt_is_cheapest_feasible_branch() {
    // every other primally feasible branch is at least as expensive
    let b = LinkBudget::default();
    for input in feasible_instances(200) {
        let k = kkt_power_allocate(&input, &b).unwrap();
        let oma = oma_power_allocate(&input, &b).unwrap();
        if oma.feasible {
            assert!(k.energy.transmit <= oma.energy.transmit * (1.0 + 1e-12));
        }
        let fixed = fixed_power_allocate(&input, &b, 0.5, AccessMode::Noma).unwrap();
        if fixed.feasible {
            assert!(k.energy.transmit <= fixed.energy.transmit * (1.0 + 1e-12));
        }
    }
}

#[test]
fn lagrangian_hessian_positive_definite() {
    let b = LinkBudget::default();
    let mut checked = 0;
    for (i, input) in feasible_instances(150).into_iter().enumerate() {
        let k = kkt_power_allocate(&input, &b).unwrap();
        let t = k.times;
        let mu2 = k.multipliers.mu2;
        if !(t.t_off_solo > 0.0 && t.t_off_noma > 0.0 && mu2 > 0.0) {
            continue;
        }
        let b1 = 1.0 + k.powers.p2 * input.gain_second;
        let g1 = input.gain_first;
        let lag = |p11: f64, p12: f64| {
            let r = t.t_off_solo * b.bandwidth_hz * (1.0 + p11 * g1).log2()
                + t.t_off_noma * b.bandwidth_hz * (1.0 + p12 * g1 / b1).log2();
            p11 * t.t_off_solo + p12 * t.t_off_noma + mu2 * (input.bits_first - r)
        };
        let mut rng = rng_from(i as u64);
        let pmax = input.first.max_power_w;
        let (x, y) = (rng.random_range(0.05..0.95) * pmax, rng.random_range(0.05..0.95) * pmax);
        let h = 1e-4 * x.min(y);
        let fxx = (lag(x + h, y) - 2.0 * lag(x, y) + lag(x - h, y)) / (h * h);
        let fyy = (lag(x, y + h) - 2.0 * lag(x, y) + lag(x, y - h)) / (h * h);
        let fxy = (lag(x + h, y + h) - lag(x + h, y - h) - lag(x - h, y + h) + lag(x - h, y - h)) / (4.0 * h * h);
        assert!(fxx > 0.0 && fyy > 0.0 && fxx * fyy - fxy * fxy > 0.0, "{fxx} {fyy} {fxy}");
        checked += 1;
        if checked == 100 {
            break;
        }
    }
    assert_eq!(checked, 100);
}

#[test]
fn energy_non_increasing_in_deadline() {
    let b = LinkBudget::default();
    for input in feasible_instances(100) {
        let e0 = kkt_power_allocate(&input, &b).unwrap().energy.transmit;
        let longer = PairInput { t_max: input.t_max * 1.5, ..input };
        let e1 = kkt_power_allocate(&longer, &b).unwrap();
        assert!(e1.feasible && e1.energy.transmit <= e0 * (1.0 + 1e-12));
        let huge = PairInput { t_max: input.t_max * 1e3, ..input };
        assert!(power_oracle(&huge, &b).unwrap().energy.transmit <= e0);
    }
}

fn random_context(n_real: usize, k: usize, seed: u64, policy: PowerPolicy) -> AllocationContext {
    let mut rng = rng_from(seed);
    let participants = (0..n_real)
        .map(|i| Participant::new(i, device(rng.random_range(0.2..3.0), 1.0), 1.1e6))
        .collect();
    let gains = (0..n_real).map(|_| (0..k).map(|_| 10f64.powf(rng.random_range(-0.5..2.0))).collect()).collect();
    AllocationContext::new(participants, gains, k, LinkBudget::default(), 5.0, AccessMode::Noma, policy).unwrap()
}

#[test]
fn two_users_one_channel() {
    let ctx = random_context(2, 1, 1, PowerPolicy::Kkt);
    let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
    let out = match_subchannels(&table, None, 0, MatchOptions::default()).unwrap();
    assert_eq!(out.swaps, 0);
    assert_eq!(out.matching.pairs(), &[[0, 1]]);
}

#[test]
fn four_users_reach_exhaustive_optimum_from_every_start() {
    for seed in 0..30 {
        let ctx = random_context(4, 2, seed, PowerPolicy::Kkt);
        let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
        let (_, best) = brute_force_matching(&table, Execution::Sequential).unwrap();
        for pairing in [[[0, 1], [2, 3]], [[0, 2], [1, 3]], [[0, 3], [1, 2]]] {
            for order in [false, true] {
                let mut pairs = pairing.to_vec();
                if order {
                    pairs.swap(0, 1);
                }
                let start = Matching::from_pairs(pairs).unwrap();
                let out = match_subchannels(&table, Some(start), 0, MatchOptions::default()).unwrap();
                assert!(!best.better_than(&out.cost), "seed {seed}: {:?} vs {:?}", out.cost, best);
            }
        }
    }
}

#[test]
fn ten_users_stable_and_near_optimal() {
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let ctx = random_context(10, 5, derive(3, &[seed]), PowerPolicy::Kkt);
        let table = CostTable::build(&ctx, Execution::Parallel).unwrap();
        let out = match_subchannels(&table, None, seed, MatchOptions::default()).unwrap();
        assert!(out.converged && out.cycles <= 100);
        assert!(is_exchange_stable(&out.matching, &table));
        for w in out.trace.windows(2) {
            assert!(w[1].better_than(&w[0]));
        }
        let (_, best) = brute_force_matching(&table, Execution::Parallel).unwrap();
        assert_eq!(best.infeasible, out.cost.infeasible);
        ratios.push(out.cost.transmit / best.transmit);
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[ratios.len() / 2] <= 1.25, "{ratios:?}");
}

#[test]
fn swap_blocking_examples() {
    // identical users and identical gains: no swap helps
    let participants = (0..4).map(|i| Participant::new(i, device(1.0, 1.0), 1e6)).collect();
    let ctx = AllocationContext::new(participants, vec![vec![5.0, 5.0]; 4], 2, LinkBudget::default(), 4.0, AccessMode::Noma, PowerPolicy::Kkt).unwrap();
    let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
    let mu = Matching::from_pairs(vec![[0, 1], [2, 3]]).unwrap();
    assert!(!swap_blocking_pair(&mu, 0, 2, &table).unwrap());
    assert!(swap_blocking_pair(&mu, 0, 1, &table).is_err());
    // symmetric instance: brute force returns the lexicographically first matching
    let (m, _) = brute_force_matching(&table, Execution::Parallel).unwrap();
    assert_eq!(m.pairs(), &[[0, 1], [2, 3]]);

    // a construction where one swap helps both channels
    for seed in 0..50 {
        let ctx = random_context(4, 2, seed, PowerPolicy::Kkt);
        let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
        let (opt, _) = brute_force_matching(&table, Execution::Sequential).unwrap();
        for m in 0..4 {
            for j in 0..4 {
                if opt.channel_of(m) != opt.channel_of(j) {
                    assert!(!swap_blocking_pair(&opt, m, j, &table).unwrap());
                }
            }
        }
        let worse = opt.swapped(opt.pairs()[0][0], opt.pairs()[1][0]);
        let c_worse = table.cost(&worse);
        let c_opt = table.cost(&opt);
        if c_opt.better_than(&c_worse) {
            assert!(swap_blocking_pair(&worse, opt.pairs()[0][0], opt.pairs()[1][0], &table).unwrap());
        }
    }
}

#[test]
fn brute_force_refuses_large_instances() {
    let ctx = random_context(14, 7, 1, PowerPolicy::Kkt);
    let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
    assert!(matches!(brute_force_matching(&table, Execution::Sequential), Err(cfl_noma::Error::Refused(_))));
}

#[test]
fn brute_force_policies_agree() {
    let ctx = random_context(8, 4, 5, PowerPolicy::Kkt);
    let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
    let a = brute_force_matching(&table, Execution::Sequential).unwrap();
    let b = brute_force_matching(&table, Execution::Parallel).unwrap();
    assert_eq!(a.0, b.0);
}

#[test]
fn padding_with_virtual_users() {
    let ctx = random_context(3, 2, 8, PowerPolicy::Kkt);
    assert_eq!(ctx.len(), 4);
    assert!(ctx.participants[3].is_virtual);
    let table = CostTable::build(&ctx, Execution::Sequential).unwrap();
    let out = match_subchannels(&table, None, 1, MatchOptions::default()).unwrap();
    assert!(is_exchange_stable(&out.matching, &table));
    assert!(out.cost.transmit.is_finite());
}

#[test]
fn noma_never_costs_more_than_oma() {
    for seed in 0..20 {
        let mut ctx = random_context(6, 3, seed, PowerPolicy::Kkt);
        let noma = CostTable::build(&ctx, Execution::Sequential).unwrap();
        ctx.access = AccessMode::Oma;
        let oma = CostTable::build(&ctx, Execution::Sequential).unwrap();
        for k in 0..3 {
            for a in 0..6 {
                for b in (a + 1)..6 {
                    let (x, y) = (noma.pair_cost(a, b, k), oma.pair_cost(a, b, k));
                    assert!(x.infeasible <= y.infeasible);
                    if y.infeasible == 0 {
                        assert!(x.transmit <= y.transmit * (1.0 + 1e-12));
                    }
                }
            }
        }
    }
}
