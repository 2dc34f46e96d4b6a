use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cfl_noma::allocation::AccessMode;
use cfl_noma::exec::Execution;
use cfl_noma::fl::write_checkpoint;
use cfl_noma::sim::{self, io, AllocationMode, ClusteringMode, ExperimentConfig, RunOptions, RunOutput};

#[derive(Parser)]
#[command(name = "cfl-noma", version, about = "Clustered federated learning over a NOMA uplink")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_enum)]
    access: Option<Access>,
    #[arg(long, global = true, value_enum)]
    alloc: Option<Alloc>,
    /// Users when no config is given.
    #[arg(long, global = true, default_value_t = 30)]
    users: usize,
    /// Run every parallel site on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Proposed,
    Random,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Access {
    Noma,
    Oma,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alloc {
    Kkt,
    Fixed,
    Random,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw the label-skewed partition and write per-user histograms.
    Partition,
    /// Estimate each user's label concentration.
    Estimate,
    /// Spectral clustering on the estimated concentrations.
    Cluster,
    /// Matching and power allocation for one round.
    Allocate {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Clustered training with every member joining every round, over the learning-rate grid.
    Train,
    /// Full pipeline.
    Run,
    /// Swap matching against exhaustive search.
    BenchMatching {
        #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
    },
    /// Energy against the deadline, plus NOMA against OMA.
    SweepTmax {
        #[arg(long, value_delimiter = ',', default_value = "0.8,1.0,1.5,2.0,3.0")]
        t_values: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Closed-form power allocation against the numerical oracle.
    OracleCheck {
        #[arg(long, default_value_t = 500)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => sim::load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::minimal(0, c.users),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.clustering_mode = match m {
            Mode::Proposed => ClusteringMode::Proposed,
            Mode::Random => ClusteringMode::RandomClusters,
            Mode::None => ClusteringMode::NoClustering,
        };
    }
    if let Some(a) = c.access {
        cfg.access_mode = match a {
            Access::Noma => AccessMode::Noma,
            Access::Oma => AccessMode::Oma,
        };
    }
    if let Some(a) = c.alloc {
        cfg.allocation_mode = match a {
            Alloc::Kkt => AllocationMode::MatchingKkt,
            Alloc::Fixed => AllocationMode::MatchingFixedPower,
            Alloc::Random => AllocationMode::RandomFixedPower,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exec(c: &Common) -> Execution {
    if c.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn write_run(out: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    let a = &run.artifacts;
    io::write_rows(&out.join("metrics.csv"), &run.report.metrics)?;
    io::write_rows(&out.join("matching.csv"), &a.matchings)?;
    io::write_rows(&out.join("channels.csv"), &a.channels)?;
    io::write_rows(&out.join("participation.csv"), &run.report.participation)?;
    io::write_rows(&out.join("infeasible.csv"), &run.report.infeasible)?;
    io::write_alphas(&out.join("alphas.csv"), &a.estimates)?;
    io::write_clusters(&out.join("clusters.csv"), &a.clustering.assignment)?;
    io::write_histograms(&out.join("histograms.csv"), &a.population)?;
    if let Some(s) = &a.clustering.spectral {
        io::write_spectrum(&out.join("spectrum.csv"), &s.embedding.spectrum)?;
    }
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let last = cfg.training.rounds.saturating_sub(1) as u64;
    for (c, m) in a.models.iter().enumerate() {
        write_checkpoint(&ckpt.join(format!("cluster_{c}.bin")), m, last, c as u64)?;
    }
    sim::save_config(cfg, &out.join("config.json"))?;
    io::write_json(&out.join("report.json"), &run.report)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load(c)?;
    let ex = exec(c);
    let out = &c.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.cmd {
        Cmd::Partition => {
            let pop = sim::build_population(&cfg)?;
            io::write_histograms(&out.join("histograms.csv"), &pop)?;
            let report = json!({
                "users": pop.datasets.len(),
                "groups": pop.groups,
                "samples": pop.datasets.iter().map(|d| d.len()).collect::<Vec<_>>(),
                "sampled_with_replacement": pop.sampled_with_replacement,
            });
            io::write_json(&out.join("report.json"), &report)?;
        }
        Cmd::Estimate => {
            let pop = sim::build_population(&cfg)?;
            let est = sim::estimate_alphas(&cfg, &pop, ex)?;
            io::write_alphas(&out.join("alphas.csv"), &est)?;
            let report = json!({
                "users": est.len(),
                "converged": est.iter().filter(|e| e.converged).count(),
                "max_iterations": est.iter().map(|e| e.iterations).max(),
            });
            io::write_json(&out.join("report.json"), &report)?;
        }
        Cmd::Cluster => {
            let pop = sim::build_population(&cfg)?;
            let est = sim::estimate_alphas(&cfg, &pop, ex)?;
            let cl = sim::cluster_users(&cfg, &est, ex)?;
            io::write_alphas(&out.join("alphas.csv"), &est)?;
            io::write_clusters(&out.join("clusters.csv"), &cl.assignment)?;
            let mut report = json!({ "num_clusters": cl.assignment.num_clusters() });
            if let Some(s) = &cl.spectral {
                io::write_spectrum(&out.join("spectrum.csv"), &s.embedding.spectrum)?;
                report["selection"] = serde_json::to_value(&s.selection)?;
                report["bandwidth"] = json!(s.bandwidth);
                report["ratiocut"] = json!(s.ratiocut);
                report["adjusted_rand_vs_groups"] =
                    json!(cfl_noma::clustering::adjusted_rand_index(cl.assignment.labels(), &pop.groups)?);
            }
            io::write_json(&out.join("report.json"), &report)?;
        }
        Cmd::Allocate { round } => {
            let pop = sim::build_population(&cfg)?;
            let est = sim::estimate_alphas(&cfg, &pop, ex)?;
            let cl = sim::cluster_users(&cfg, &est, ex)?;
            let (mut matching, mut channels, mut infeasible, mut summary) = (vec![], vec![], vec![], vec![]);
            for z in 0..cl.assignment.num_clusters() {
                let members = cl.assignment.members(z);
                let a = sim::allocate_round(&cfg, &pop, &members, round, z, ex)?;
                summary.push(json!({
                    "cluster_id": z,
                    "selected": a.selected,
                    "contributors": a.contributors,
                    "energy_joules": a.energy,
                    "transmit_energy_joules": a.transmit_energy,
                    "cycles": a.cycles,
                    "stable": a.stable,
                }));
                matching.extend(a.matching);
                channels.extend(a.channels);
                infeasible.extend(a.infeasible);
            }
            io::write_rows(&out.join("matching.csv"), &matching)?;
            io::write_rows(&out.join("channels.csv"), &channels)?;
            io::write_rows(&out.join("infeasible.csv"), &infeasible)?;
            io::write_clusters(&out.join("clusters.csv"), &cl.assignment)?;
            io::write_json(&out.join("report.json"), &json!({ "round": round, "clusters": summary }))?;
        }
        Cmd::Train => {
            let grid = if cfg.learning_rate_grid.is_empty() {
                vec![cfg.training.learning_rate]
            } else {
                cfg.learning_rate_grid.clone()
            };
            let opts = RunOptions { exec: ex, ideal_channel: true };
            let mut best: Option<(f64, ExperimentConfig, RunOutput)> = None;
            let mut results = Vec::new();
            for lr in grid {
                let mut c = cfg.clone();
                c.training.learning_rate = lr;
                let run = sim::run_experiment_with(&c, opts)?;
                let acc = run.report.final_accuracy_smoothed;
                results.push(json!({ "learning_rate": lr, "final_accuracy_smoothed": acc }));
                if best.as_ref().is_none_or(|b| acc > b.0) {
                    best = Some((acc, c, run));
                }
            }
            let (_, c, run) = best.expect("grid is non-empty");
            write_run(out, &c, &run)?;
            io::write_json(
                &out.join("grid.json"),
                &json!({ "best_learning_rate": c.training.learning_rate, "grid": results }),
            )?;
        }
        Cmd::Run => {
            let run = sim::run_experiment_with(&cfg, RunOptions { exec: ex, ideal_channel: false })?;
            write_run(out, &cfg, &run)?;
            let r = &run.report;
            println!(
                "clusters={} final_accuracy={:.4} energy_j={:.4} infeasible={}",
                r.num_clusters,
                r.final_accuracy,
                r.total_energy,
                r.infeasible.len()
            );
        }
        Cmd::BenchMatching { sizes, seeds } => {
            let b = sim::run_allocation_benchmark(&cfg, &sizes, seeds, ex)?;
            io::write_rows(&out.join("bench.csv"), &b.rows)?;
            io::write_rows(&out.join("bench_trace.csv"), &b.traces)?;
            io::write_json(&out.join("report.json"), &b.summary)?;
            for s in &b.summary {
                println!(
                    "N={} K={} median_ratio={:.4} exact={}/{} max_cycles={}",
                    s.users, s.subchannels, s.median_transmit_ratio, s.exact_optimum, s.instances, s.max_cycles
                );
            }
        }
        Cmd::SweepTmax { t_values, seeds } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let s = sim::sweep_t_max(&cfg, &t_values, &seeds, ex)?;
            let a = sim::compare_access(&cfg, &seeds, ex)?;
            io::write_rows(&out.join("sweep.csv"), &s.rows)?;
            io::write_rows(&out.join("access.csv"), &a.rows)?;
            let report = json!({
                "monotone": s.monotone,
                "kkt_below_fixed": s.kkt_below_fixed,
                "infeasible_at_smallest": s.infeasible_at_smallest,
                "access_matched_instances": a.matched_instances,
                "noma_le_oma": a.noma_le_oma,
            });
            io::write_json(&out.join("report.json"), &report)?;
            println!("monotone={} kkt_below_fixed={} noma_le_oma={}", s.monotone, s.kkt_below_fixed, a.noma_le_oma);
        }
        Cmd::OracleCheck { instances, tolerance } => {
            let o = sim::oracle_check(&cfg, instances, tolerance)?;
            io::write_oracle(&out.join("oracle.csv"), &o.rows)?;
            let report = json!({
                "instances": o.rows.len(),
                "max_relative_gap": o.max_relative_gap,
                "within_tolerance": o.within_tolerance,
                "all_audits_passed": o.all_audits_passed,
            });
            io::write_json(&out.join("report.json"), &report)?;
            println!("max_relative_gap={:e} within_tolerance={}", o.max_relative_gap, o.within_tolerance);
            if !o.within_tolerance || !o.all_audits_passed {
                bail!("oracle check failed");
            }
        }
    }
    Ok(())
}
