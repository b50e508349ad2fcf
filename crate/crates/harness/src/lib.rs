//! Desk-scale experiments for the lotus optimizer: synthetic problems, a
//! small MLP, policy comparisons and trace files.

pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;
pub mod mlp;
pub mod problem;
pub mod trace;
pub mod verify;

pub use error::{HarnessError, Result};
pub use experiment::{
    compare_policies, drive, mlp_train, mlp_train_with, run_experiment, run_full_adam, ComparisonReport, MlpOutcome,
    PolicyResult, RunOptions, RunOutcome, RunStatus, ToleranceRule,
};
pub use problem::{Dims, Evaluation, Objective, ProblemKind, ProblemSpec};
pub use trace::{emit_trace, read_trace, RunTrace, TraceFormat, TraceRecord};
