//! Memory-efficient training with low-rank gradient projection and adaptive
//! subspace switching.
//!
//! Gradients of each weight matrix are compressed onto an orthonormal basis
//! found by a randomized range finder, Adam moments live in the compressed
//! space, and the basis is recomputed when the policy in [`policy`] decides
//! the current subspace has stopped paying off.

pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod policy;
pub mod subspace;

pub use error::{LotusError, Result};
pub use linalg::{DenseMatrix, RngState};
pub use optimizer::{
    memory_accounting, AccountingMode, AccountingReport, FullAdam, LayerOptState, LotusHyperparams, LotusOptimizer,
    MomentPolicy, Optimizer, StepDiagnostics, UpdateRule,
};
pub use policy::{PolicyKind, SwitchConfig};
pub use subspace::{compute_projector, ProjectionMethod, Projector, ProjectorConfig, Side};
