//! Kernel-density Wasserstein gradient flows and drifting fields.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below fix the precision for callers that do not care.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod generator;
pub mod geometry;
pub mod kde;
pub mod kernels;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod velocity;

pub use data::{sample as sample_dataset, DatasetKind, DatasetSpec};
pub use ensemble::Ensemble;
pub use error::{Error, Result};
pub use flow::{estimate_energy, run as run_flow, step as flow_step, EnergyConfig, EnergyEstimator, FlowConfig, Frame, Trajectory};
pub use generator::{train, train_step, Activation, Generator, Optimizer, OptimizerState, TrainConfig, TrainOutcome};
pub use geometry::Geometry;
pub use kde::{kde_density, kde_eval, kde_grad, kde_log_density, kde_score, KdeEval};
pub use kernels::{AssumptionReport, KernelFamily, KernelSpec, MaternNu};
pub use metrics::{mmd2_biased, mode_report, ModeReport};
pub use rng::SeededStream;
pub use scalar::Scalar;
pub use velocity::{drifting_field, field_batch, velocity, DivergenceSpec, FieldContext, VectorField};

pub type EnsembleF64 = Ensemble<f64>;
pub type EnsembleF32 = Ensemble<f32>;
pub type KernelSpecF64 = KernelSpec<f64>;
pub type KernelSpecF32 = KernelSpec<f32>;
pub type FieldContextF64 = FieldContext<f64>;
pub type FieldContextF32 = FieldContext<f32>;
pub type DivergenceSpecF64 = DivergenceSpec<f64>;
pub type FlowConfigF64 = FlowConfig<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type GeneratorF64 = Generator<f64>;
pub type GeneratorF32 = Generator<f32>;
pub type TrainConfigF64 = TrainConfig<f64>;
pub type DatasetSpecF64 = DatasetSpec<f64>;
