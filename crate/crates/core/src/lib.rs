//! Output-error model-reference adaptive control.
//!
//! An actor-critic learner adapts a 3-tap error-feedback law online so that
//! a plant's output follows a reference signal. The controller sees only the
//! output and the reference; plant matrices are used by the simulator alone.
//!
//! Modules:
//! - [`plant`]: continuous LTI plants, matched disturbances, exact ZOH.
//! - [`reference`]: reference signal generators.
//! - [`mrac`]: critic/actor parameterizations and their update laws.
//! - [`harness`]: the closed loop, one record per sampling step.
//! - [`config`], [`log`], [`metrics`]: experiment files, trajectories, summaries.
//! - [`oracle`]: independent reference computations used by the tests.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod config;
pub mod harness;
pub mod linalg;
pub mod log;
pub mod metrics;
pub mod mrac;
pub mod oracle;
pub mod plant;
pub mod reference;

pub use config::{ConfigError, Experiment, ExperimentConfig, Quadrature, PRESETS};
pub use harness::{
    run_episode, run_experiment, AdaptiveController, HarnessError, LearnerSettings, Process,
    SimulatedPlant, Transition,
};
pub use log::{StepRecord, TerminalStatus, TrajectoryLog};
pub use metrics::{summarize, Summary};
pub use mrac::{
    ActorGains, ControlError, CostWeights, CriticWeights, ErrorWindow, LearningRule, UpdateMode,
};
pub use plant::{
    discretize_zoh, DiscretePlant, Disturbance, DisturbanceSchedule, PlantError, PlantModel,
    PlantState,
};
pub use reference::{ReferenceKind, ReferenceSignal, ReferenceSpec};
