//! Allocation-only studies: matching benchmark, deadline sweep, access comparison, oracle check.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::allocation::{
    brute_force_matching, is_exchange_stable, kkt_audit, kkt_power_allocate, match_subchannels, power_oracle,
    AccessMode, AllocationContext, Cost, CostTable, KktCase, Matching, Participant, PowerPolicy,
};
use crate::channel::{draw_gain, DeviceProfile};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::{derive, rng_from, SeedTree, Stream};

/// Random users and gains drawn from the config's device and link settings.
#[derive(Debug, Clone)]
pub struct Instance {
    pub participants: Vec<Participant>,
    pub gains: Vec<Vec<f64>>,
    pub num_subchannels: usize,
}

impl Instance {
    pub fn random(cfg: &ExperimentConfig, users: usize, num_subchannels: usize, seed: u64) -> Result<Self> {
        let tree = SeedTree::new(seed);
        let dd = &cfg.device_defaults;
        let radius = cfg.link.cell_radius_m;
        let mut participants = Vec::with_capacity(users);
        let mut gains = Vec::with_capacity(users);
        for u in 0..users {
            let mut rng = tree.rng(Stream::Bench, &[u as u64]);
            let samples = rng.random_range(cfg.partition.samples_min..=cfg.partition.samples_max) as f64;
            let cpu = if dd.cpu_max_hz > dd.cpu_min_hz {
                rng.random_range(dd.cpu_min_hz..dd.cpu_max_hz)
            } else {
                dd.cpu_min_hz
            };
            let lo = (dd.min_distance_m / radius).powi(2);
            let device = DeviceProfile {
                cpu_hz: cpu,
                samples,
                cycles_per_bit: dd.cycles_per_sample,
                energy_coeff: dd.energy_coeff,
                distance_m: radius * rng.random_range(lo..1.0f64).sqrt(),
                max_power_w: dd.max_power_w,
            };
            let row = (0..num_subchannels)
                .map(|_| Ok(draw_gain(device.distance_m, &cfg.link, &mut rng)?.gain))
                .collect::<Result<Vec<f64>>>()?;
            participants.push(Participant::new(u, device, cfg.model_bits));
            gains.push(row);
        }
        Ok(Self {
            participants,
            gains,
            num_subchannels,
        })
    }

    pub fn context(&self, cfg: &ExperimentConfig, t_max: f64, access: AccessMode, policy: PowerPolicy) -> Result<AllocationContext> {
        AllocationContext::new(
            self.participants.clone(),
            self.gains.clone(),
            self.num_subchannels,
            cfg.link,
            t_max,
            access,
            policy,
        )
    }
}

/// Computation plus transmit energy of the feasible pairs.
fn realised(table: &CostTable, m: &Matching) -> f64 {
    table
        .outcomes_for(m)
        .filter(|o| o.solution.feasible)
        .fold(0.0, |acc, o| acc + o.solution.energy.total())
}

fn transmitters(ctx: &AllocationContext, table: &CostTable, m: &Matching) -> usize {
    table
        .outcomes_for(m)
        .filter(|o| o.solution.feasible)
        .map(|o| [o.first, o.second].iter().filter(|&&i| !ctx.participants[i].is_virtual).count())
        .sum()
}

/// Best of several local-search runs, each from a different start.
fn best_match(table: &CostTable, starts: &[Option<Matching>], seed: u64, cfg: &ExperimentConfig) -> Result<(Matching, Cost, usize)> {
    let mut best: Option<(Matching, Cost, usize)> = None;
    for s in starts {
        let out = match_subchannels(table, s.clone(), seed, cfg.matching)?;
        if best.as_ref().is_none_or(|b| out.cost.better_than(&b.1)) {
            best = Some((out.matching, out.cost, out.cycles));
        }
    }
    best.ok_or_else(|| Error::domain("no matching start given"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub users: usize,
    pub subchannels: usize,
    pub seed: u64,
    pub matching_transmit: f64,
    pub optimum_transmit: f64,
    pub transmit_ratio: f64,
    pub matching_total: f64,
    pub optimum_total: f64,
    pub total_ratio: f64,
    pub matching_infeasible: usize,
    pub optimum_infeasible: usize,
    pub cycles: usize,
    pub swaps: usize,
    pub stable: bool,
    pub matching_secs: f64,
    pub brute_force_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub users: usize,
    pub seed: u64,
    pub iteration: usize,
    pub infeasible: usize,
    pub transmit_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub users: usize,
    pub subchannels: usize,
    pub instances: usize,
    pub median_transmit_ratio: f64,
    pub max_transmit_ratio: f64,
    pub exact_optimum: usize,
    pub max_cycles: usize,
    pub all_stable: bool,
    pub matching_secs: f64,
    pub brute_force_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub traces: Vec<TraceRow>,
    pub summary: Vec<BenchSummary>,
}

fn ratio(a: &Cost, b: &Cost) -> (f64, f64) {
    if a.infeasible != b.infeasible {
        return (f64::INFINITY, f64::INFINITY);
    }
    let t = if b.transmit > 0.0 { a.transmit / b.transmit } else { 1.0 };
    let at = a.transmit + a.computation;
    let bt = b.transmit + b.computation;
    (t, if bt > 0.0 { at / bt } else { 1.0 })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Swap matching against exhaustive search for each user count in `sizes`.
pub fn run_allocation_benchmark(cfg: &ExperimentConfig, sizes: &[usize], seeds: usize, exec: Execution) -> Result<BenchReport> {
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut summary = Vec::new();
    for &n in sizes {
        if n > 12 {
            return Err(Error::Refused(format!("exhaustive search is limited to 12 users, got {n}")));
        }
        let k = n.div_ceil(2).max(1);
        let mut size_rows = Vec::with_capacity(seeds);
        for s in 0..seeds as u64 {
            let seed = derive(cfg.seed, &[Stream::Bench as u64, n as u64, s]);
            let inst = Instance::random(cfg, n, k, seed)?;
            let ctx = inst.context(cfg, cfg.t_max_s, cfg.access_mode, PowerPolicy::Kkt)?;
            let table = CostTable::build(&ctx, exec)?;
            let t0 = Instant::now();
            let out = match_subchannels(&table, None, seed, cfg.matching)?;
            let t_match = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let (_, best) = brute_force_matching(&table, exec)?;
            let t_brute = t1.elapsed().as_secs_f64();
            let (tr, tot) = ratio(&out.cost, &best);
            for (i, c) in out.trace.iter().enumerate() {
                traces.push(TraceRow {
                    users: n,
                    seed: s,
                    iteration: i,
                    infeasible: c.infeasible,
                    transmit_energy: c.transmit,
                });
            }
            size_rows.push(BenchRow {
                users: n,
                subchannels: k,
                seed: s,
                matching_transmit: out.cost.transmit,
                optimum_transmit: best.transmit,
                transmit_ratio: tr,
                matching_total: out.cost.transmit + out.cost.computation,
                optimum_total: best.transmit + best.computation,
                total_ratio: tot,
                matching_infeasible: out.cost.infeasible,
                optimum_infeasible: best.infeasible,
                cycles: out.cycles,
                swaps: out.swaps,
                stable: is_exchange_stable(&out.matching, &table),
                matching_secs: t_match,
                brute_force_secs: t_brute,
            });
        }
        let ratios: Vec<f64> = size_rows.iter().map(|r| r.transmit_ratio).collect();
        summary.push(BenchSummary {
            users: n,
            subchannels: k,
            instances: size_rows.len(),
            median_transmit_ratio: median(ratios.clone()),
            max_transmit_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            exact_optimum: size_rows
                .iter()
                .filter(|r| r.matching_infeasible == r.optimum_infeasible && !best_is_better(r))
                .count(),
            max_cycles: size_rows.iter().map(|r| r.cycles).max().unwrap_or(0),
            all_stable: size_rows.iter().all(|r| r.stable),
            matching_secs: size_rows.iter().map(|r| r.matching_secs).sum(),
            brute_force_secs: size_rows.iter().map(|r| r.brute_force_secs).sum(),
        });
        rows.extend(size_rows);
    }
    Ok(BenchReport { rows, traces, summary })
}

fn best_is_better(r: &BenchRow) -> bool {
    Cost {
        infeasible: r.optimum_infeasible,
        transmit: r.optimum_transmit,
        computation: 0.0,
    }
    .better_than(&Cost {
        infeasible: r.matching_infeasible,
        transmit: r.matching_transmit,
        computation: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub t_max: f64,
    pub kkt_energy: f64,
    pub kkt_transmit: f64,
    pub kkt_infeasible: usize,
    pub fixed_energy: f64,
    pub fixed_transmit: f64,
    pub fixed_infeasible: usize,
    /// Real users whose pair is feasible under KKT.
    pub transmissions: usize,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// KKT energy never rises with the deadline (infeasible counts first).
    pub monotone: bool,
    /// KKT is no worse than fixed power at every point.
    pub kkt_below_fixed: bool,
    /// Seeds whose smallest deadline leaves some pair infeasible.
    pub infeasible_at_smallest: Vec<u64>,
}

fn lex_le(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1 * (1.0 + 1e-12) + 1e-300)
}

/// Total energy against the deadline, with warm-started matchings.
pub fn sweep_t_max(cfg: &ExperimentConfig, t_values: &[f64], seeds: &[u64], exec: Execution) -> Result<SweepReport> {
    if t_values.is_empty() || t_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("t_max values must be non-empty and strictly ascending"));
    }
    let k = cfg.num_subchannels;
    let policy_fixed = PowerPolicy::Fixed {
        fraction: cfg.fixed_power_fraction,
    };
    let mut rows = Vec::new();
    let mut monotone = true;
    let mut below = true;
    let mut infeasible_at_smallest = Vec::new();
    for &s in seeds {
        let seed = derive(cfg.seed, &[Stream::Bench as u64, 1 << 32, s]);
        let inst = Instance::random(cfg, 2 * k, k, seed)?;
        let mut prev_kkt: Option<Matching> = None;
        let mut prev_fixed: Option<Matching> = None;
        let mut prev_point: Option<(usize, f64)> = None;
        for (ti, &t) in t_values.iter().enumerate() {
            let ctx_f = inst.context(cfg, t, cfg.access_mode, policy_fixed)?;
            let table_f = CostTable::build(&ctx_f, exec)?;
            let (mf, cf, _) = best_match(&table_f, &[prev_fixed.clone()], seed, cfg)?;
            let ctx_k = inst.context(cfg, t, cfg.access_mode, PowerPolicy::Kkt)?;
            let table_k = CostTable::build(&ctx_k, exec)?;
            let (mk, ck, cycles) = best_match(&table_k, &[prev_kkt.clone(), Some(mf.clone())], seed, cfg)?;
            let ek = realised(&table_k, &mk);
            let ef = realised(&table_f, &mf);
            let point = (ck.infeasible, ek);
            if let Some(p) = prev_point {
                monotone &= lex_le(point, p);
            }
            below &= lex_le((ck.infeasible, ck.transmit), (cf.infeasible, cf.transmit));
            if ti == 0 && ck.infeasible > 0 {
                infeasible_at_smallest.push(s);
            }
            rows.push(SweepRow {
                seed: s,
                t_max: t,
                kkt_energy: ek,
                kkt_transmit: ck.transmit,
                kkt_infeasible: ck.infeasible,
                fixed_energy: ef,
                fixed_transmit: cf.transmit,
                fixed_infeasible: cf.infeasible,
                transmissions: transmitters(&ctx_k, &table_k, &mk),
                cycles,
            });
            prev_point = Some(point);
            prev_kkt = Some(mk);
            prev_fixed = Some(mf);
        }
    }
    Ok(SweepReport {
        rows,
        monotone,
        kkt_below_fixed: below,
        infeasible_at_smallest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessRow {
    pub seed: u64,
    pub noma_energy: f64,
    pub noma_infeasible: usize,
    pub oma_energy: f64,
    pub oma_infeasible: usize,
    /// Both legs serve every participant.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessReport {
    pub rows: Vec<AccessRow>,
    pub matched_instances: usize,
    /// NOMA energy ≤ OMA energy on every matched instance.
    pub noma_le_oma: bool,
}

/// NOMA against OMA on the same participants, gains and deadline.
pub fn compare_access(cfg: &ExperimentConfig, seeds: &[u64], exec: Execution) -> Result<AccessReport> {
    let k = cfg.num_subchannels;
    let mut rows = Vec::new();
    for &s in seeds {
        let seed = derive(cfg.seed, &[Stream::Bench as u64, 2 << 32, s]);
        let inst = Instance::random(cfg, 2 * k, k, seed)?;
        let ctx_o = inst.context(cfg, cfg.t_max_s, AccessMode::Oma, PowerPolicy::Kkt)?;
        let table_o = CostTable::build(&ctx_o, exec)?;
        let (mo, co, _) = best_match(&table_o, &[None], seed, cfg)?;
        let ctx_n = inst.context(cfg, cfg.t_max_s, AccessMode::Noma, PowerPolicy::Kkt)?;
        let table_n = CostTable::build(&ctx_n, exec)?;
        let (mn, cn, _) = best_match(&table_n, &[None, Some(mo.clone())], seed, cfg)?;
        rows.push(AccessRow {
            seed: s,
            noma_energy: realised(&table_n, &mn),
            noma_infeasible: cn.infeasible,
            oma_energy: realised(&table_o, &mo),
            oma_infeasible: co.infeasible,
            matched: cn.infeasible == 0 && co.infeasible == 0,
        });
    }
    let matched = rows.iter().filter(|r| r.matched).count();
    let ok = rows
        .iter()
        .filter(|r| r.matched)
        .all(|r| r.noma_energy <= r.oma_energy * (1.0 + 1e-12));
    Ok(AccessReport {
        rows,
        matched_instances: matched,
        noma_le_oma: ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance: usize,
    /// Transmit energy of the closed-form solution.
    pub kkt_energy: f64,
    pub oracle_energy: f64,
    pub relative_gap: f64,
    pub kkt_case: KktCase,
    pub audit_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub max_relative_gap: f64,
    pub within_tolerance: bool,
    pub all_audits_passed: bool,
}

/// Closed-form KKT powers against the numerical oracle on random feasible pairs.
pub fn oracle_check(cfg: &ExperimentConfig, instances: usize, tolerance: f64) -> Result<OracleReport> {
    let mut rows = Vec::with_capacity(instances);
    let mut attempt = 0u64;
    while rows.len() < instances {
        if attempt > 100 * instances as u64 + 100 {
            return Err(Error::Infeasible(format!(
                "only {} feasible pairs found in {attempt} draws",
                rows.len()
            )));
        }
        let seed = derive(cfg.seed, &[Stream::Bench as u64, 3 << 32, attempt]);
        attempt += 1;
        let inst = Instance::random(cfg, 2, 1, seed)?;
        // Deadlines spread over the range where the pair is tight.
        let t_max = {
            let t = inst.participants.iter().map(|p| p.device.computation_time()).fold(0.0, f64::max);
            t + rng_from(seed).random_range(0.05..1.0) * cfg.t_max_s
        };
        let ctx = inst.context(cfg, t_max, AccessMode::Noma, PowerPolicy::Kkt)?;
        let (_, _, input) = ctx.pair_input(0, 1, 0);
        let kkt = kkt_power_allocate(&input, &cfg.link)?;
        let oracle = power_oracle(&input, &cfg.link)?;
        if !kkt.feasible || !oracle.feasible {
            continue;
        }
        let (a, b) = (kkt.energy.transmit, oracle.energy.transmit);
        let gap = (a - b).abs() / b.abs().max(1e-300);
        rows.push(OracleRow {
            instance: rows.len(),
            kkt_energy: a,
            oracle_energy: b,
            relative_gap: gap,
            kkt_case: kkt.kkt_case,
            audit_passed: kkt_audit(&input, &cfg.link, &kkt)?.passes(1e-6),
        });
    }
    let max_gap = rows.iter().map(|r| r.relative_gap).fold(0.0, f64::max);
    Ok(OracleReport {
        within_tolerance: max_gap <= tolerance,
        all_audits_passed: rows.iter().all(|r| r.audit_passed),
        max_relative_gap: max_gap,
        rows,
    })
}
