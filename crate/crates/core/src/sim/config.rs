use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::{AccessMode, MatchOptions};
use crate::channel::{DeviceProfile, LinkBudget};
use crate::clustering::SpectralOptions;
use crate::dirichlet::BfgsOptions;
use crate::error::{Error, FieldError, Result};
use crate::fl::{ConvergenceParams, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    #[default]
    Proposed,
    RandomClusters,
    NoClustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    #[default]
    MatchingKkt,
    MatchingFixedPower,
    RandomFixedPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
}

/// IDX (MNIST-format) file locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Feature dimension of the synthetic clouds.
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the synthetic class means.
    pub separation: f64,
    /// Within-class standard deviation.
    pub noise: f64,
    pub idx: Option<IdxPaths>,
    /// Keep only the first `n` IDX training images.
    pub max_train: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            dim: 20,
            train_per_class: 400,
            test_per_class: 200,
            separation: 0.35,
            noise: 1.0,
            idx: None,
            max_train: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_classes: usize,
    /// Symmetric Dirichlet concentration, used when `groups` is 0.
    pub concentration: f64,
    pub samples_min: usize,
    pub samples_max: usize,
    pub test_samples_per_user: usize,
    /// Number of label-skew groups. Group `g` owns the classes `j ≡ g (mod groups)`.
    pub groups: usize,
    /// Prior weight on a group's own classes.
    pub group_focus: f64,
    /// Prior weight on every other class.
    pub group_background: f64,
    /// Explicit group priors; override `groups` when non-empty.
    pub group_priors: Vec<Vec<f64>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            concentration: 0.5,
            samples_min: 60,
            samples_max: 120,
            test_samples_per_user: 100,
            groups: 3,
            group_focus: 3.0,
            group_background: 0.02,
            group_priors: Vec::new(),
        }
    }
}

impl PartitionConfig {
    /// Resolved per-group Dirichlet priors, empty for the symmetric prior.
    pub fn priors(&self) -> Vec<Vec<f64>> {
        if !self.group_priors.is_empty() {
            return self.group_priors.clone();
        }
        (0..self.groups)
            .map(|g| {
                (0..self.num_classes)
                    .map(|j| if j % self.groups == g { self.group_focus } else { self.group_background })
                    .collect()
            })
            .collect()
    }
}

/// Ranges for randomly generated devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceDefaults {
    pub cpu_min_hz: f64,
    pub cpu_max_hz: f64,
    pub cycles_per_sample: f64,
    pub energy_coeff: f64,
    pub max_power_w: f64,
    pub min_distance_m: f64,
}

impl Default for DeviceDefaults {
    fn default() -> Self {
        Self {
            cpu_min_hz: 1.8e9,
            cpu_max_hz: 2.2e9,
            cycles_per_sample: 1e7,
            energy_coeff: 1e-28,
            max_power_w: 1.0,
            min_distance_m: 10.0,
        }
    }
}

fn default_t_max() -> f64 {
    1.5
}
fn default_k() -> usize {
    3
}
fn default_bits() -> f64 {
    1.1e6
}
fn default_fraction() -> f64 {
    0.5
}
/// Label-proportion features live on the simplex, where a unit kNN scale already spans a group.
fn default_spectral() -> SpectralOptions {
    SpectralOptions {
        bandwidth_scale: 1.0,
        ..SpectralOptions::default()
    }
}
fn default_window() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_users: usize,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub link: LinkBudget,
    /// One profile per user; generated from `device_defaults` when empty.
    #[serde(default)]
    pub devices: Vec<DeviceProfile>,
    #[serde(default)]
    pub device_defaults: DeviceDefaults,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Candidate learning rates for `train`; the pipeline itself uses `training.learning_rate`.
    #[serde(default)]
    pub learning_rate_grid: Vec<f64>,
    #[serde(default = "default_t_max")]
    pub t_max_s: f64,
    #[serde(default = "default_k")]
    pub num_subchannels: usize,
    /// Uploaded model size D in bits.
    #[serde(default = "default_bits")]
    pub model_bits: f64,
    #[serde(default)]
    pub clustering_mode: ClusteringMode,
    #[serde(default)]
    pub allocation_mode: AllocationMode,
    #[serde(default)]
    pub access_mode: AccessMode,
    /// Fixed-power baselines transmit at this fraction of `P_max`.
    #[serde(default = "default_fraction")]
    pub fixed_power_fraction: f64,
    /// A partial section takes the clustering-module defaults for the missing fields.
    #[serde(default = "default_spectral")]
    pub spectral: SpectralOptions,
    #[serde(default)]
    pub estimation: BfgsOptions,
    #[serde(default)]
    pub convergence: ConvergenceParams,
    #[serde(default)]
    pub matching: MatchOptions,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
}

struct Checker {
    errors: Vec<FieldError>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0) || !v.is_finite() {
            self.fail(path, format!("must be finite and > 0, got {v}"));
        }
    }

    fn at_least(&mut self, path: &str, v: usize, min: usize) {
        if v < min {
            self.fail(path, format!("must be >= {min}, got {v}"));
        }
    }

    fn wrap(&mut self, prefix: &str, r: Result<()>) {
        if let Err(e) = r {
            self.fail(prefix, e.to_string());
        }
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the two required fields.
    pub fn minimal(seed: u64, num_users: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed, "num_users": num_users }))
            .expect("defaults deserialize")
    }

    /// Every validation failure, addressed by field path.
    pub fn check(&self) -> Vec<FieldError> {
        let mut c = Checker { errors: Vec::new() };
        c.at_least("num_users", self.num_users, 2);
        c.at_least("num_subchannels", self.num_subchannels, 1);
        c.positive("t_max_s", self.t_max_s);
        c.positive("model_bits", self.model_bits);
        if !(self.fixed_power_fraction > 0.0 && self.fixed_power_fraction <= 1.0) {
            c.fail("fixed_power_fraction", format!("must lie in (0, 1], got {}", self.fixed_power_fraction));
        }
        c.at_least("smoothing_window", self.smoothing_window, 1);
        for (i, lr) in self.learning_rate_grid.iter().enumerate() {
            c.positive(&format!("learning_rate_grid[{i}]"), *lr);
        }

        let p = &self.partition;
        c.at_least("partition.num_classes", p.num_classes, 2);
        c.positive("partition.concentration", p.concentration);
        c.at_least("partition.samples_min", p.samples_min, 1);
        if p.samples_max < p.samples_min {
            c.fail("partition.samples_max", "must be >= partition.samples_min");
        }
        c.at_least("partition.test_samples_per_user", p.test_samples_per_user, 1);
        if p.group_priors.is_empty() && p.groups > 0 {
            c.positive("partition.group_focus", p.group_focus);
            c.positive("partition.group_background", p.group_background);
            if p.groups > p.num_classes {
                c.fail("partition.groups", "cannot exceed partition.num_classes");
            }
        }
        for (g, prior) in p.group_priors.iter().enumerate() {
            if prior.len() != p.num_classes {
                c.fail(
                    format!("partition.group_priors[{g}]"),
                    format!("needs {} entries, got {}", p.num_classes, prior.len()),
                );
            }
            for (j, a) in prior.iter().enumerate() {
                c.positive(&format!("partition.group_priors[{g}][{j}]"), *a);
            }
        }

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                c.at_least("data.dim", d.dim, 1);
                c.at_least("data.train_per_class", d.train_per_class, 1);
                c.at_least("data.test_per_class", d.test_per_class, 1);
                c.positive("data.separation", d.separation);
                c.positive("data.noise", d.noise);
            }
            DataSource::Idx => {
                if d.idx.is_none() {
                    c.fail("data.idx", "required when data.source is \"idx\"");
                }
            }
        }

        c.wrap("link", self.link.validate());
        if !self.devices.is_empty() && self.devices.len() != self.num_users {
            c.fail("devices", format!("needs {} entries, got {}", self.num_users, self.devices.len()));
        }
        for (i, dev) in self.devices.iter().enumerate() {
            c.wrap(&format!("devices[{i}]"), dev.validate());
            if dev.samples < 1.0 || dev.samples.fract() != 0.0 {
                c.fail(format!("devices[{i}].samples"), "must be a whole number >= 1");
            }
        }
        let dd = &self.device_defaults;
        c.positive("device_defaults.cpu_min_hz", dd.cpu_min_hz);
        if !(dd.cpu_max_hz >= dd.cpu_min_hz) || !dd.cpu_max_hz.is_finite() {
            c.fail("device_defaults.cpu_max_hz", "must be finite and >= cpu_min_hz");
        }
        c.positive("device_defaults.cycles_per_sample", dd.cycles_per_sample);
        c.positive("device_defaults.energy_coeff", dd.energy_coeff);
        c.positive("device_defaults.max_power_w", dd.max_power_w);
        c.positive("device_defaults.min_distance_m", dd.min_distance_m);
        if dd.min_distance_m >= self.link.cell_radius_m {
            c.fail("device_defaults.min_distance_m", "must be below link.cell_radius_m");
        }

        let t = &self.training;
        c.positive("training.learning_rate", t.learning_rate);
        c.at_least("training.local_epochs", t.local_epochs, 1);
        c.at_least("training.batch_size", t.batch_size, 1);
        c.at_least("training.rounds", t.rounds, 1);

        let s = &self.spectral;
        c.at_least("spectral.z_min", s.z_min, 1);
        if s.z_max < s.z_min {
            c.fail("spectral.z_max", "must be >= spectral.z_min");
        }
        c.positive("spectral.bandwidth_scale", s.bandwidth_scale);
        c.at_least("spectral.kmeans_restarts", s.kmeans_restarts, 1);
        c.at_least("spectral.kmeans_max_iters", s.kmeans_max_iters, 1);
        c.positive("estimation.tol", self.estimation.tol);
        c.at_least("estimation.max_iters", self.estimation.max_iters, 1);
        c.wrap("convergence", self.convergence.validate());
        c.at_least("matching.max_cycles", self.matching.max_cycles, 1);
        c.errors
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.check();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(vec![FieldError {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_json())?;
    Ok(())
}
