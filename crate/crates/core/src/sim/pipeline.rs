use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::config::{AllocationMode, ClusteringMode, DeviceDefaults, ExperimentConfig};
use super::data::{load_pools, sample_test_sets};
use crate::allocation::{
    is_exchange_stable, match_subchannels, random_matching, AccessMode, AllocationContext, CostTable, KktCase,
    Participant, PowerPolicy,
};
use crate::channel::{draw_gain, DeviceProfile, LinkBudget};
use crate::clustering::{spectral_cluster, ClusterAssignment, SpectralResult, ZMethod};
use crate::dirichlet::{
    estimate_concentration, sample_dirichlet_partition, ConcentrationVector, Estimate, PartitionSpec, UserDataset,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fl::{
    convergence_bound_rhs, correct_count, federated_round, generalization_term, global_loss, moving_average,
    softmax_dim, ModelParams,
};
use crate::seed::{SeedTree, Stream};

/// The simulated user population.
#[derive(Debug, Clone)]
pub struct Population {
    pub datasets: Vec<UserDataset>,
    pub test_sets: Vec<UserDataset>,
    pub proportions: Vec<Vec<f64>>,
    /// Label-skew group each user was drawn from.
    pub groups: Vec<usize>,
    pub devices: Vec<DeviceProfile>,
    pub sampled_with_replacement: bool,
}

fn generate_device(dd: &DeviceDefaults, radius: f64, samples: usize, tree: &SeedTree, user: usize) -> DeviceProfile {
    let mut rng = tree.rng(Stream::Devices, &[user as u64]);
    let cpu = if dd.cpu_max_hz > dd.cpu_min_hz {
        rng.random_range(dd.cpu_min_hz..dd.cpu_max_hz)
    } else {
        dd.cpu_min_hz
    };
    // Uniform over the annulus between the minimum distance and the cell edge.
    let lo = (dd.min_distance_m / radius).powi(2);
    let distance = radius * rng.random_range(lo..1.0f64).sqrt();
    DeviceProfile {
        cpu_hz: cpu,
        samples: samples as f64,
        cycles_per_bit: dd.cycles_per_sample,
        energy_coeff: dd.energy_coeff,
        distance_m: distance,
        max_power_w: dd.max_power_w,
    }
}

pub fn build_population(cfg: &ExperimentConfig) -> Result<Population> {
    let tree = SeedTree::new(cfg.seed);
    let n = cfg.num_users;
    let sizes: Vec<usize> = if cfg.devices.is_empty() {
        let mut rng = tree.rng(Stream::Devices, &[u64::MAX]);
        (0..n)
            .map(|_| rng.random_range(cfg.partition.samples_min..=cfg.partition.samples_max))
            .collect()
    } else {
        cfg.devices.iter().map(|d| d.samples as usize).collect()
    };
    let pools = load_pools(cfg, &tree)?;
    let spec = PartitionSpec {
        num_users: n,
        num_classes: cfg.partition.num_classes,
        concentration: cfg.partition.concentration,
        samples_per_user: sizes.clone(),
        group_priors: cfg.partition.priors(),
    };
    let part = sample_dirichlet_partition(&spec, &pools.train, tree.seed(Stream::Partition, &[]))?;
    let test_sets = sample_test_sets(&pools.test, &part.proportions, cfg.partition.test_samples_per_user, &tree)?;
    let devices = if cfg.devices.is_empty() {
        (0..n)
            .map(|i| generate_device(&cfg.device_defaults, cfg.link.cell_radius_m, sizes[i], &tree, i))
            .collect()
    } else {
        cfg.devices.clone()
    };
    Ok(Population {
        groups: (0..n).map(|i| spec.group_of(i)).collect(),
        datasets: part.datasets,
        test_sets,
        proportions: part.proportions,
        devices,
        sampled_with_replacement: part.sampled_with_replacement,
    })
}

/// Per-user BFGS estimates of the label concentration.
pub fn estimate_alphas(cfg: &ExperimentConfig, pop: &Population, exec: Execution) -> Result<Vec<Estimate>> {
    let init = ConcentrationVector::uniform(cfg.partition.num_classes, 1.0)?;
    exec.map(&pop.datasets, |d| estimate_concentration(d.histogram(), &init, &cfg.estimation))
        .into_iter()
        .collect()
}

/// Scale-free clustering features: the estimated mean `α / α₀`.
pub fn alpha_features(estimates: &[Estimate]) -> Vec<Vec<f64>> {
    estimates.iter().map(|e| e.alpha.mean().into_vec()).collect()
}

#[derive(Debug, Clone)]
pub struct ClusteringOutcome {
    pub assignment: ClusterAssignment,
    /// Present whenever the spectral step ran (it also fixes `Z` for random clusters).
    pub spectral: Option<SpectralResult>,
}

pub fn cluster_users(cfg: &ExperimentConfig, estimates: &[Estimate], exec: Execution) -> Result<ClusteringOutcome> {
    let tree = SeedTree::new(cfg.seed);
    let n = estimates.len();
    if cfg.clustering_mode == ClusteringMode::NoClustering {
        return Ok(ClusteringOutcome {
            assignment: ClusterAssignment::single(n)?,
            spectral: None,
        });
    }
    let features = alpha_features(estimates);
    let spectral = spectral_cluster(&features, &cfg.spectral, tree.seed(Stream::Clustering, &[0]), exec)?;
    let assignment = match cfg.clustering_mode {
        ClusteringMode::Proposed => spectral.assignment.clone(),
        _ => {
            // Same number of clusters, balanced random membership.
            let z = spectral.assignment.num_clusters();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut tree.rng(Stream::Clustering, &[1]));
            let mut labels = vec![0; n];
            for (pos, &user) in order.iter().enumerate() {
                labels[user] = pos % z;
            }
            ClusterAssignment::new(labels)?
        }
    };
    Ok(ClusteringOutcome {
        assignment,
        spectral: Some(spectral),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelRow {
    pub round: usize,
    pub user_id: usize,
    pub subchannel: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingRow {
    pub round: usize,
    pub cluster_id: usize,
    pub subchannel: usize,
    /// `None` for padding users.
    pub user_first: Option<usize>,
    pub user_second: Option<usize>,
    pub p11: f64,
    pub p12: f64,
    pub p2: f64,
    /// Computation plus transmit energy; empty when infeasible.
    pub pair_energy: Option<f64>,
    pub kkt_case: KktCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibleUser {
    pub round: usize,
    pub cluster_id: usize,
    pub user_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundAllocation {
    /// Users picked for this round, ascending.
    pub selected: Vec<usize>,
    pub contributors: Vec<usize>,
    /// Cluster members that could not join or whose pair failed.
    pub infeasible: Vec<InfeasibleUser>,
    pub energy: f64,
    pub transmit_energy: f64,
    pub cycles: usize,
    pub swaps: usize,
    pub converged: bool,
    pub stable: bool,
    pub matching: Vec<MatchingRow>,
    pub channels: Vec<ChannelRow>,
}

/// `None` if `device` can deliver `bits` on its best channel before the deadline at full power.
pub fn solo_infeasibility(device: &DeviceProfile, bits: f64, gains: &[f64], budget: &LinkBudget, t_max: f64) -> Option<String> {
    let window = t_max - device.computation_time();
    if !(window > 0.0) {
        return Some(format!(
            "computation time {:.4} s reaches the {t_max} s deadline",
            device.computation_time()
        ));
    }
    let best = gains.iter().copied().fold(0.0, f64::max);
    let need = (bits / (budget.bandwidth_hz * window)).exp2() - 1.0;
    if !(best > 0.0) || need / best > device.max_power_w {
        return Some("cannot deliver the model alone at maximum power before the deadline".into());
    }
    None
}

pub fn draw_round_gains(cfg: &ExperimentConfig, pop: &Population, round: usize, users: &[usize]) -> Result<Vec<Vec<f64>>> {
    let tree = SeedTree::new(cfg.seed);
    users
        .iter()
        .map(|&u| {
            (0..cfg.num_subchannels)
                .map(|k| {
                    let mut rng = tree.rng(Stream::Channel, &[round as u64, u as u64, k as u64]);
                    Ok(draw_gain(pop.devices[u].distance_m, &cfg.link, &mut rng)?.gain)
                })
                .collect()
        })
        .collect()
}

pub fn power_policy(cfg: &ExperimentConfig) -> PowerPolicy {
    match cfg.allocation_mode {
        AllocationMode::MatchingKkt => PowerPolicy::Kkt,
        _ => PowerPolicy::Fixed {
            fraction: cfg.fixed_power_fraction,
        },
    }
}

/// Channels, participant selection, matching and power control for one cluster in one round.
pub fn allocate_round(
    cfg: &ExperimentConfig,
    pop: &Population,
    members: &[usize],
    round: usize,
    cluster: usize,
    exec: Execution,
) -> Result<RoundAllocation> {
    let tree = SeedTree::new(cfg.seed);
    let gains = draw_round_gains(cfg, pop, round, members)?;
    let mut channels = Vec::new();
    for (row, &u) in gains.iter().zip(members) {
        for (k, &g) in row.iter().enumerate() {
            channels.push(ChannelRow { round, user_id: u, subchannel: k, gain: g });
        }
    }

    let mut infeasible = Vec::new();
    let mut eligible = Vec::new();
    for (idx, &u) in members.iter().enumerate() {
        match solo_infeasibility(&pop.devices[u], cfg.model_bits, &gains[idx], &cfg.link, cfg.t_max_s) {
            None => eligible.push(idx),
            Some(reason) => infeasible.push(InfeasibleUser { round, cluster_id: cluster, user_id: u, reason }),
        }
    }
    eligible.shuffle(&mut tree.rng(Stream::Selection, &[round as u64, cluster as u64]));
    eligible.truncate(2 * cfg.num_subchannels);
    eligible.sort_unstable();

    let mut out = RoundAllocation {
        selected: eligible.iter().map(|&i| members[i]).collect(),
        contributors: Vec::new(),
        infeasible,
        energy: 0.0,
        transmit_energy: 0.0,
        cycles: 0,
        swaps: 0,
        converged: true,
        stable: true,
        matching: Vec::new(),
        channels,
    };
    if eligible.is_empty() {
        return Ok(out);
    }

    let participants = eligible
        .iter()
        .map(|&i| Participant::new(members[i], pop.devices[members[i]], cfg.model_bits))
        .collect();
    let sel_gains = eligible.iter().map(|&i| gains[i].clone()).collect();
    let ctx = AllocationContext::new(
        participants,
        sel_gains,
        cfg.num_subchannels,
        cfg.link,
        cfg.t_max_s,
        cfg.access_mode,
        power_policy(cfg),
    )?;
    let table = CostTable::build(&ctx, exec)?;
    let match_seed = tree.seed(Stream::Matching, &[round as u64, cluster as u64]);
    let matching = match cfg.allocation_mode {
        AllocationMode::RandomFixedPower => random_matching(cfg.num_subchannels, match_seed),
        _ => {
            let m = match_subchannels(&table, None, match_seed, cfg.matching)?;
            out.cycles = m.cycles;
            out.swaps = m.swaps;
            out.converged = m.converged;
            out.stable = is_exchange_stable(&m.matching, &table);
            m.matching
        }
    };

    for o in table.outcomes_for(&matching) {
        let pf = &ctx.participants[o.first];
        let ps = &ctx.participants[o.second];
        let sol = &o.solution;
        let real = |p: &Participant| (!p.is_virtual).then_some(p.id);
        out.matching.push(MatchingRow {
            round,
            cluster_id: cluster,
            subchannel: o.subchannel,
            user_first: real(pf),
            user_second: real(ps),
            p11: sol.powers.p11,
            p12: sol.powers.p12,
            p2: sol.powers.p2,
            pair_energy: sol.feasible.then(|| sol.energy.total()),
            kkt_case: sol.kkt_case,
        });
        for p in [pf, ps].into_iter().filter(|p| !p.is_virtual) {
            if sol.feasible {
                out.contributors.push(p.id);
            } else {
                out.infeasible.push(InfeasibleUser {
                    round,
                    cluster_id: cluster,
                    user_id: p.id,
                    reason: sol.reason.clone().unwrap_or_else(|| "pair allocation infeasible".into()),
                });
            }
        }
        if sol.feasible {
            out.energy += sol.energy.total();
            out.transmit_energy += sol.energy.transmit;
        }
    }
    out.contributors.sort_unstable();
    out.matching.sort_by_key(|r| r.subchannel);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub round: usize,
    pub cluster_id: usize,
    pub global_loss: f64,
    pub test_accuracy: f64,
    pub participants: usize,
    pub energy_joules: f64,
    pub bound_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipationRow {
    pub round: usize,
    pub cluster_id: usize,
    pub members: usize,
    pub selected: usize,
    pub contributed: usize,
    pub infeasible_selected: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub members: Vec<usize>,
    pub final_accuracy: f64,
    pub final_accuracy_smoothed: f64,
    pub final_global_loss: f64,
    pub generalization_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingStats {
    pub total_swaps: usize,
    pub max_cycles: usize,
    pub mean_cycles: f64,
    pub all_converged: bool,
    pub all_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunChecks {
    /// Row count equals rounds × clusters.
    pub row_count: bool,
    pub all_finite: bool,
    /// Every selected user contributed or was logged infeasible.
    pub reconciled: bool,
    pub matchings_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub clustering_mode: ClusteringMode,
    pub allocation_mode: AllocationMode,
    pub access_mode: AccessMode,
    pub ideal_channel: bool,
    pub num_clusters: usize,
    pub z_method: Option<ZMethod>,
    pub metrics: Vec<MetricsRow>,
    pub clusters: Vec<ClusterSummary>,
    /// Pooled over every user's test set, each evaluated with its cluster model.
    pub final_accuracy: f64,
    pub final_accuracy_smoothed: f64,
    pub accuracy_by_round: Vec<f64>,
    pub total_energy: f64,
    pub transmit_energy: f64,
    pub matching: MatchingStats,
    pub participation: Vec<ParticipationRow>,
    pub infeasible: Vec<InfeasibleUser>,
    pub bound_warnings: usize,
    pub checks: RunChecks,
    pub wall_clock_s: f64,
}

/// Bulk per-run data written to CSV by the CLI.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub population: Population,
    pub estimates: Vec<Estimate>,
    pub clustering: ClusteringOutcome,
    pub channels: Vec<ChannelRow>,
    pub matchings: Vec<MatchingRow>,
    pub models: Vec<ModelParams>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: RunArtifacts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Every cluster member joins every round and channels are ignored.
    pub ideal_channel: bool,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    let start = Instant::now();
    cfg.validate()?;
    let exec = opts.exec;
    let tree = SeedTree::new(cfg.seed);
    let pop = build_population(cfg).map_err(|e| e.in_stage("partition"))?;
    let estimates = estimate_alphas(cfg, &pop, exec).map_err(|e| e.in_stage("estimation"))?;
    let clustering = cluster_users(cfg, &estimates, exec).map_err(|e| e.in_stage("clustering"))?;
    let z = clustering.assignment.num_clusters();
    let members: Vec<Vec<usize>> = (0..z).map(|c| clustering.assignment.members(c)).collect();

    let c = cfg.partition.num_classes;
    let dim = pop.datasets[0].dim();
    let mut models = vec![ModelParams::zeros(softmax_dim(dim, c)); z];
    let eta = cfg.convergence.eta();
    let mut prev_gap: Vec<f64> = members
        .iter()
        .zip(&models)
        .map(|(m, w)| global_loss(&pop.datasets, w, m))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("training"))?;

    let mut metrics = Vec::with_capacity(cfg.training.rounds * z);
    let mut participation = Vec::new();
    let mut infeasible = Vec::new();
    let mut channels = Vec::new();
    let mut matchings = Vec::new();
    let mut accuracy_by_round = Vec::with_capacity(cfg.training.rounds);
    let mut cluster_acc: Vec<Vec<f64>> = vec![Vec::new(); z];
    let mut total_energy = 0.0;
    let mut transmit_energy = 0.0;
    let mut stats = MatchingStats {
        total_swaps: 0,
        max_cycles: 0,
        mean_cycles: 0.0,
        all_converged: true,
        all_stable: true,
    };
    let mut matching_runs = 0usize;
    let mut bound_warnings = 0;
    let mut reconciled = true;

    for round in 0..cfg.training.rounds {
        let mut round_hits = 0;
        let mut round_total = 0;
        for cluster in 0..z {
            let m = &members[cluster];
            let alloc = if opts.ideal_channel {
                RoundAllocation {
                    selected: m.clone(),
                    contributors: m.clone(),
                    infeasible: Vec::new(),
                    energy: 0.0,
                    transmit_energy: 0.0,
                    cycles: 0,
                    swaps: 0,
                    converged: true,
                    stable: true,
                    matching: Vec::new(),
                    channels: Vec::new(),
                }
            } else {
                allocate_round(cfg, &pop, m, round, cluster, exec).map_err(|e| e.in_pipeline("allocation", round, cluster))?
            };
            let infeasible_selected = alloc
                .infeasible
                .iter()
                .filter(|u| alloc.selected.contains(&u.user_id))
                .count();
            let skipped = alloc.infeasible.len() - infeasible_selected;
            reconciled &= alloc.contributors.len() + infeasible_selected == alloc.selected.len()
                && alloc.selected.len() + skipped <= m.len();
            participation.push(ParticipationRow {
                round,
                cluster_id: cluster,
                members: m.len(),
                selected: alloc.selected.len(),
                contributed: alloc.contributors.len(),
                infeasible_selected,
                skipped,
            });
            if !opts.ideal_channel && cfg.allocation_mode != AllocationMode::RandomFixedPower && !alloc.selected.is_empty() {
                matching_runs += 1;
                stats.total_swaps += alloc.swaps;
                stats.max_cycles = stats.max_cycles.max(alloc.cycles);
                stats.mean_cycles += alloc.cycles as f64;
                stats.all_converged &= alloc.converged;
                stats.all_stable &= alloc.stable;
            }

            let clients: Vec<&UserDataset> = alloc.contributors.iter().map(|&u| &pop.datasets[u]).collect();
            let seeds: Vec<u64> = alloc
                .contributors
                .iter()
                .map(|&u| tree.seed(Stream::Training, &[round as u64, u as u64]))
                .collect();
            models[cluster] = federated_round(&models[cluster], &clients, &seeds, &cfg.training, exec)
                .map_err(|e| e.in_pipeline("training", round, cluster))?;

            let betas: Vec<f64> = clients.iter().map(|d| d.len() as f64).collect();
            let bound = if betas.is_empty() {
                prev_gap[cluster]
            } else {
                let b = convergence_bound_rhs(prev_gap[cluster], &cfg.convergence, eta, &betas)
                    .map_err(|e| e.in_pipeline("bound", round, cluster))?;
                bound_warnings += usize::from(b.warning);
                b.rhs
            };
            let loss = global_loss(&pop.datasets, &models[cluster], m).map_err(|e| e.in_pipeline("training", round, cluster))?;
            let (mut hits, mut total) = (0, 0);
            for &u in m {
                let (h, n) = correct_count(&models[cluster], &pop.test_sets[u]).map_err(|e| e.in_pipeline("evaluation", round, cluster))?;
                hits += h;
                total += n;
            }
            round_hits += hits;
            round_total += total;
            let acc = hits as f64 / total as f64;
            cluster_acc[cluster].push(acc);
            prev_gap[cluster] = loss;
            total_energy += alloc.energy;
            transmit_energy += alloc.transmit_energy;
            metrics.push(MetricsRow {
                round,
                cluster_id: cluster,
                global_loss: loss,
                test_accuracy: acc,
                participants: alloc.contributors.len(),
                energy_joules: alloc.energy,
                bound_rhs: bound,
            });
            infeasible.extend(alloc.infeasible);
            channels.extend(alloc.channels);
            matchings.extend(alloc.matching);
        }
        accuracy_by_round.push(round_hits as f64 / round_total as f64);
    }
    if matching_runs > 0 {
        stats.mean_cycles /= matching_runs as f64;
    }

    let window = cfg.smoothing_window;
    let clusters = (0..z)
        .map(|cl| {
            let betas: Vec<f64> = members[cl].iter().map(|&u| pop.datasets[u].len() as f64).collect();
            let alphas: Vec<f64> = members[cl]
                .iter()
                .map(|&u| estimates[u].alpha.alpha0() / c as f64)
                .collect();
            Ok(ClusterSummary {
                cluster_id: cl,
                members: members[cl].clone(),
                final_accuracy: *cluster_acc[cl].last().expect("rounds >= 1"),
                final_accuracy_smoothed: *moving_average(&cluster_acc[cl], window).last().expect("rounds >= 1"),
                final_global_loss: prev_gap[cl],
                generalization_term: generalization_term(&cfg.convergence, &betas, &alphas)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("bound"))?;

    let all_finite = metrics.iter().all(|r| {
        [r.global_loss, r.test_accuracy, r.energy_joules, r.bound_rhs]
            .iter()
            .all(|v| v.is_finite())
    }) && total_energy.is_finite();
    let report = RunReport {
        seed: cfg.seed,
        clustering_mode: cfg.clustering_mode,
        allocation_mode: cfg.allocation_mode,
        access_mode: cfg.access_mode,
        ideal_channel: opts.ideal_channel,
        num_clusters: z,
        z_method: clustering.spectral.as_ref().map(|s| s.selection.method),
        checks: RunChecks {
            row_count: metrics.len() == cfg.training.rounds * z,
            all_finite,
            reconciled,
            matchings_stable: stats.all_stable,
        },
        metrics,
        clusters,
        final_accuracy: *accuracy_by_round.last().expect("rounds >= 1"),
        final_accuracy_smoothed: *moving_average(&accuracy_by_round, window).last().expect("rounds >= 1"),
        accuracy_by_round,
        total_energy,
        transmit_energy,
        matching: stats,
        participation,
        infeasible,
        bound_warnings,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    if !report.checks.all_finite {
        return Err(Error::Invariant("run produced non-finite metrics".into()));
    }
    Ok(RunOutput {
        report,
        artifacts: RunArtifacts {
            population: pop,
            estimates,
            clustering,
            channels,
            matchings,
            models,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(samples: f64) -> DeviceProfile {
        DeviceProfile {
            cpu_hz: 2e9,
            samples,
            cycles_per_bit: 1e7,
            energy_coeff: 1e-28,
            distance_m: 50.0,
            max_power_w: 1.0,
        }
    }

    #[test]
    fn solo_feasibility_reasons() {
        let b = LinkBudget::default();
        // 100 samples take 0.5 s
        assert!(solo_infeasibility(&device(100.0), 1e6, &[10.0], &b, 0.5).unwrap().contains("computation time"));
        assert!(solo_infeasibility(&device(100.0), 1e6, &[1e3], &b, 1.5).is_none());
        assert!(solo_infeasibility(&device(100.0), 1e6, &[1e-12], &b, 1.5).unwrap().contains("maximum power"));
        assert!(solo_infeasibility(&device(100.0), 1e6, &[], &b, 1.5).is_some());
    }

    #[test]
    fn round_gains_depend_only_on_round_user_channel() {
        let cfg = ExperimentConfig::minimal(4, 6);
        let pop = build_population(&cfg).unwrap();
        let all = draw_round_gains(&cfg, &pop, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let some = draw_round_gains(&cfg, &pop, 2, &[4, 1]).unwrap();
        assert_eq!(some, vec![all[4].clone(), all[1].clone()]);
        assert_ne!(draw_round_gains(&cfg, &pop, 3, &[4]).unwrap()[0], all[4]);
    }

    #[test]
    fn policy_follows_allocation_mode() {
        let mut cfg = ExperimentConfig::minimal(1, 4);
        assert_eq!(power_policy(&cfg), PowerPolicy::Kkt);
        cfg.allocation_mode = AllocationMode::RandomFixedPower;
        cfg.fixed_power_fraction = 0.25;
        assert_eq!(power_policy(&cfg), PowerPolicy::Fixed { fraction: 0.25 });
    }

    #[test]
    fn random_clusters_are_balanced() {
        let mut cfg = ExperimentConfig::minimal(8, 30);
        cfg.clustering_mode = ClusteringMode::RandomClusters;
        let pop = build_population(&cfg).unwrap();
        let est = estimate_alphas(&cfg, &pop, Execution::Sequential).unwrap();
        let cl = cluster_users(&cfg, &est, Execution::Sequential).unwrap();
        let z = cl.assignment.num_clusters();
        let sizes: Vec<usize> = (0..z).map(|c| cl.assignment.members(c).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }
}
