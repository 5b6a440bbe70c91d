//! Decision-boundary-aware MMD domain adaptation.
//!
//! The crate learns shared subspaces for a labelled source domain and an
//! unlabelled target domain by minimising MMD-style trace objectives, refines
//! target pseudo-labels iteratively, and optionally reweights the conditional
//! and repulsive MMD terms with a compacting graph (pull far same-class
//! cross-domain pairs together) and a separation graph (push close
//! different-class pairs apart).
//!
//! Modules, bottom up:
//!
//! - [`linalg`]: distances, kernels, centering, generalized eigensolver
//! - [`data`]: domains, pairs, configuration, reports
//! - [`mmd`]: marginal, conditional and repulsive coefficient matrices
//! - [`graph`]: affinity, compacting / separation graphs, Laplacians
//! - [`classify`]: 1-NN, label propagation, accuracy
//! - [`adapt`]: model zoo and the pseudo-label loop
//! - [`harness`]: feature files, synthetic benchmarks, experiment runner

pub mod adapt;
pub mod classify;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod mmd;

pub use adapt::{run_adaptation, BaseModel, Boundary, ModelKind};
pub use data::{AdaptConfig, AdaptationReport, DomainPair, LabeledDomain, UnlabeledDomain};
pub use error::{Error, Result};
