//! One JSON document per run. Unknown fields are rejected so that typos
//! surface as config errors instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use gfdrift::{Activation, DatasetSpec, DivergenceSpec, EnergyEstimator, KernelFamily, Optimizer};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed: initial particles, generator init, minibatches and the
    /// Monte Carlo energy stream. `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Target distribution.
    #[serde(default)]
    pub dataset: Option<DatasetSpec<f64>>,
    /// Target (and optionally initial particles) read from CSV instead.
    #[serde(default)]
    pub ensembles: Option<EnsemblePaths>,
    #[serde(default)]
    pub kernel: Option<KernelFamily<f64>>,
    #[serde(default)]
    pub divergence: Option<DivergenceSpec<f64>>,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsemblePaths {
    pub data: PathBuf,
    #[serde(default)]
    pub generated: Option<PathBuf>,
    #[serde(default)]
    pub sphere: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    #[default]
    Velocity,
    Drifting,
}

/// Where the flow's particles start.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Isotropic Gaussian `N(mean, std² I)`.
    Gaussian { n: usize, mean: Vec<f64>, std: f64 },
    /// Uniform on `S^(dim−1)`.
    UniformSphere { n: usize, dim: usize },
}

// serde cannot combine `flatten` with `deny_unknown_fields`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergySection {
    #[serde(flatten)]
    pub estimator: EnergyEstimator<f64>,
    /// Defaults to the run's divergence.
    #[serde(default)]
    pub divergence: Option<DivergenceSpec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub field: FieldKind,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub energy: Option<EnergySection>,
    #[serde(default)]
    pub log_ratio_clamp: Option<f64>,
    #[serde(default)]
    pub zero_at_cusp: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// All layer widths, latent dimension first.
    pub layers: Vec<usize>,
    #[serde(default = "tanh")]
    pub activation: Activation,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer<f64>,
    #[serde(default = "hundred")]
    pub metric_every: usize,
    /// Held-out target sample size for the MMD² metric.
    #[serde(default = "holdout")]
    pub holdout: usize,
    #[serde(default)]
    pub log_ratio_clamp: Option<f64>,
    /// Exit 1 when the final held-out MMD² exceeds this.
    #[serde(default)]
    pub mmd_threshold: Option<f64>,
}

fn tanh() -> Activation {
    Activation::Tanh
}
fn hundred() -> usize {
    100
}
fn holdout() -> usize {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyKernel {
    #[serde(flatten)]
    pub family: KernelFamily<f64>,
    /// Ambient dimension; spherical kernels live on `S^(dim−1)`.
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub kernels: Vec<VerifyKernel>,
    #[serde(default = "fifty")]
    pub instances: usize,
    #[serde(default = "equivalence_tol")]
    pub equivalence_tolerance: f64,
    #[serde(default = "score_tol")]
    pub score_tolerance: f64,
    #[serde(default = "pairs")]
    pub bound_pairs: usize,
}

fn fifty() -> usize {
    50
}
fn equivalence_tol() -> f64 {
    1e-10
}
fn score_tol() -> f64 {
    1e-6
}
fn pairs() -> usize {
    10_000
}

impl Default for VerifySection {
    fn default() -> Self {
        let k = |family, dim| VerifyKernel { family, dim };
        Self {
            kernels: vec![
                k(KernelFamily::Gaussian { h: 0.3 }, 2),
                k(KernelFamily::Gaussian { h: 1.0 }, 2),
                k(KernelFamily::Gaussian { h: 2.5 }, 8),
                k(KernelFamily::Matern { nu: gfdrift::MaternNu::ThreeHalves, length_scale: 1.0 }, 2),
                k(KernelFamily::Matern { nu: gfdrift::MaternNu::FiveHalves, length_scale: 1.0 }, 2),
                k(KernelFamily::Imq { h: 1.0, beta: 0.5 }, 2),
                k(KernelFamily::VonMisesFisher { kappa: 4.0 }, 3),
                k(KernelFamily::SphericalLog { c: 1.0, a: 0.2 }, 3),
            ],
            instances: fifty(),
            equivalence_tolerance: equivalence_tol(),
            score_tolerance: score_tol(),
            bound_pairs: pairs(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("malformed config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_value(value.clone()).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        Ok((cfg, value))
    }

    pub fn kernel(&self) -> Result<KernelFamily<f64>, CliError> {
        self.kernel.ok_or_else(|| CliError::usage("config has no `kernel` section"))
    }

    pub fn divergence(&self) -> Result<DivergenceSpec<f64>, CliError> {
        self.divergence.ok_or_else(|| CliError::usage("config has no `divergence` section"))
    }
}
