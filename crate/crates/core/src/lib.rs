//! Memory-efficient Adam with compressed gradients and quantized error
//! feedback, together with its baselines, test objectives, and the
//! closed-form bound and memory calculators used to check it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod compress;
pub mod error;
pub mod lowrank_ef;
pub mod optim;
pub mod problems;
pub mod quantize;
pub mod runner;
pub mod theory;
pub mod window;

/// Seedable generator used for all randomness in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub use error::{Error, Result};
pub use optim::{HyperParams, MicroAdam, MicroAdamAnalytical, Optimizer, OptimizerKind};
pub use problems::{problem_by_name, Objective};
pub use runner::{run, run_with, RunSpec, RunStatus, Schedule, StepReport, Trajectory};
