//! Weighted max-min fair multi-group multicast beamforming by projected
//! subgradient iterations in the low-dimensional weight space.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod harness;
pub mod init;
pub mod oracle;
pub mod psa;
pub mod rng;
pub mod scalar;
pub mod theory;
pub mod transform;
pub mod verify;

pub use channel::{generate_channels, load_config, save_config, ChannelSet, SystemConfig};
pub use error::{Error, Result};
pub use harness::{
    emit_plot_data, read_results, run_experiment, write_results, ExperimentOutcome, ExperimentSpec,
    OracleParams, ResultFormat, SweepAxis, TrialFailure, TrialRecord,
};
pub use init::{initialize, InitMethod};
pub use oracle::{evaluate_sinr, mrt_optimum, multistart_search, OracleResult};
pub use psa::{
    objective, phi_all, project, run_psa, select_y, stationarity_measure, subgradient, OutputRule,
    Selection, SolveReport, SolverOptions, StepRule, StopReason, TieBreak,
};
pub use scalar::{Complex, Real};
pub use theory::{estimate_theory_constants, moreau_gradient_estimate, TheoryConstants};
pub use transform::{
    build_r_tilde_common, build_r_tilde_general, build_transformed_problem,
    reconstruct_beamformers, CovarianceModel, TransformedProblem, WeightIterate,
};

pub type Config = SystemConfig<f64>;
pub type Channels = ChannelSet<f64>;
pub type Problem = TransformedProblem<f64>;
pub type Iterate = WeightIterate<f64>;
pub type Report = SolveReport<f64>;

pub type ConfigF32 = SystemConfig<f32>;
pub type ChannelsF32 = ChannelSet<f32>;
pub type ProblemF32 = TransformedProblem<f32>;
pub type IterateF32 = WeightIterate<f32>;
pub type ReportF32 = SolveReport<f32>;
