//! SDDP with hidden-Markov information states for grid storage dispatch.
//!
//! The pieces: a crossing-state forecast error model ([`crossing`]), the
//! stage dispatch problem on a DC network ([`grid_env`]), backward-pass
//! sampling ([`sampler`]), the SDDP training and test loops ([`sddp`]) and an
//! extensive-form reference solver for small instances ([`oracle`]).

pub mod crossing;
pub mod error;
pub mod grid;
pub mod grid_env;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod sddp;
pub mod synthetic;
pub mod series;
pub mod vfa;

pub use crossing::{
    CrossingState, CrossingStateModel, ErrorModel, IidErrorModel, InformationState, KnowledgeState, PathStep,
};
pub use error::{Error, Result};
pub use grid::OutcomeGrid;
pub use harness::{Experiment, ExperimentConfig, ModelChoice};
pub use series::{extract_crossings, Crossings, ForecastErrorSeries, Run, Sign};
pub use grid_env::{Decision, GridInstance, InstanceFile, PenaltyParams, ResourceState, StageCost};
pub use sampler::{Estimator, SamplerConfig, SamplerKind, SamplerState};
pub use sddp::{test_policy, train, RegularizationSchedule, Sddp, SolveMode, TrainConfig, TrainResult};
pub use vfa::{Cut, ValueFunctionApprox};
