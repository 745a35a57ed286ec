//! Distributed functional gradient and mirror descent over time-varying
//! networks, on a Gaussian-kernel RKHS and on the probability simplex.
//!
//! Agents hold local risks [`LocalRisk`], take a local step and mix with
//! their neighbours through a doubly stochastic [`MixingSchedule`].
//! [`dfgd::run_dfgd`] is the gradient engine, [`dfmd`] has the mirror
//! engines, [`oracle`] computes reference optima and [`harness`] runs the
//! experiment presets and writes CSV.

pub mod datagen;
pub mod dfgd;
pub mod dfmd;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod losses;
pub mod network;
pub mod objective;
pub mod oracle;

pub use dfgd::{RecordOptions, RunConfig, RunTrajectory, StepRule};
pub use dfmd::{
    DecisionDomain, MirrorGeometry, PositiveMeasure, ProbabilityVector, SimplexFunctional,
};
pub use error::{Error, Result};
pub use harness::{ExperimentPreset, MetricsRow, PresetName};
pub use kernel::{CenterSet, MercerKernel, RkhsFunction, RkhsSpace};
pub use losses::{LossKind, LossSpec};
pub use network::{MixingMatrix, MixingSchedule};
pub use objective::{GlobalRisk, LocalRisk};
pub use oracle::OracleReport;
