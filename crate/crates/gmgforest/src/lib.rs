//! Adaptive geometric multigrid with local smoothing on forest-of-trees
//! meshes, plus a simulated-rank partitioning engine with exact workload
//! and communication-volume models.
//!
//! The crate is organized along the pipeline:
//! mesh ([`forest`], [`sequences`]) → rank ownership ([`partition`]) →
//! workload model ([`balance`]) → Q1 discretization ([`fem2d`]) →
//! multigrid-preconditioned CG ([`gmg`]).

pub mod balance;
pub mod error;
pub mod fem2d;
pub mod forest;
pub mod gmg;
pub mod morton;
pub mod partition;
pub mod sequences;

pub use error::{Error, Result};
