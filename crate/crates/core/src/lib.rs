//! Unit commitment toolkit.
//!
//! The pipeline has three stages: a small transformer predicts on/off
//! commitments ([`predictor`]), deterministic heuristics repair the
//! prediction into a dispatchable schedule ([`repair`]), and a
//! branch-and-bound solver finishes the job warm-started from the repaired
//! schedule with confident predictions fixed ([`warmstart`], [`milp`]).
//! [`harness`] runs the ablation grid and reports cost/time ratios against
//! a cold solve.

pub mod datagen;
pub mod dispatch;
pub mod formulation;
pub mod harness;
pub mod instance;
pub mod milp;
pub mod predictor;
pub mod repair;
pub mod schedule;
pub mod warmstart;

#[cfg(test)]
mod testutil;

pub use dispatch::{economic_dispatch, total_cost, Dispatch, DispatchError, DispatchResult, DispatchSolver};
pub use instance::{load_instance, save_instance, Generator, InitStatus, InstanceError, Profiles, Storage, UcInstance};
pub use schedule::{compute_blocks, net_load, validate_schedule, Block, Schedule, SystemSeries, Violation, ViolationReport};
