//! Distributed variable sample-size stochastic gradient tracking over
//! i.i.d. random doubly stochastic networks.
//!
//! The crate is organised by concern:
//!
//! - [`graphs`]: weight matrices, random topologies, the mixing parameter ρ₁
//! - [`problems`]: stochastic objectives and the linear regression instance
//! - [`schedules`]: batch-size schedules `N(k)`
//! - [`algorithms`]: D-VSS-SGT and the D-SGD / D-SGT baselines
//! - [`theory`]: contraction matrices, step-size bounds, predictors
//! - [`metrics`]: error frames, Monte Carlo ensembles, fits, CSV output
//! - [`experiment`]: serialisable run descriptions and desk-scale presets
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the CLI uses.

// `!(x > 0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod error;
pub mod experiment;
pub mod graphs;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod scalar;
pub mod schedules;
pub mod theory;

pub use algorithms::{AlgorithmKind, NetworkState, RunStatus, Simulation, StepRule, Trajectory};
pub use error::{AlgorithmError, ExperimentError, GraphError, MetricsError, ProblemError, ScheduleError, TheoryError};
pub use graphs::{GraphProcess, WeightMatrix};
pub use metrics::{EnsembleSeries, MetricFrame};
pub use problems::{RegressionInstance, StochasticProblem};
pub use scalar::Scalar;
pub use schedules::{BatchSchedule, SamplePlan};
pub use theory::{StepStats, TheoryReport};

pub type WeightMatrix64 = WeightMatrix<f64>;
pub type GraphProcess64 = GraphProcess<f64>;
pub type RegressionInstance64 = RegressionInstance<f64>;
pub type NetworkState64 = NetworkState<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type StepRule64 = StepRule<f64>;

pub type GraphProcess32 = GraphProcess<f32>;
pub type RegressionInstance32 = RegressionInstance<f32>;

/// Library version recorded in output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
