//! Seeded experiments: configuration, the end-to-end pipeline and allocation studies.

mod config;
mod data;
pub mod io;
mod pipeline;
mod studies;

pub use config::{
    load_config, save_config, AllocationMode, ClusteringMode, DataConfig, DataSource, DeviceDefaults,
    ExperimentConfig, IdxPaths, PartitionConfig,
};
pub use data::{load_pools, read_idx_images, read_idx_labels, sample_test_sets, synthetic_pools, DataPools};
pub use pipeline::{
    allocate_round, alpha_features, build_population, cluster_users, draw_round_gains, estimate_alphas,
    power_policy, run_experiment, run_experiment_with, solo_infeasibility, ChannelRow, ClusterSummary,
    ClusteringOutcome, InfeasibleUser, MatchingRow, MatchingStats, MetricsRow, ParticipationRow, Population,
    RoundAllocation, RunArtifacts, RunChecks, RunOptions, RunOutput, RunReport,
};
pub use studies::{
    compare_access, oracle_check, run_allocation_benchmark, sweep_t_max, AccessReport, AccessRow, BenchReport,
    BenchRow, BenchSummary, Instance, OracleReport, OracleRow, SweepReport, SweepRow, TraceRow,
};
