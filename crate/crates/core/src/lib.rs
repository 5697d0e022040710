//! Weighted truncated adversarial weight perturbation (WT-AWP) for graph
//! neural networks.
//!
//! The crate provides the models (two-layer GCN, PPNP, three-layer linear MLP)
//! with exact reverse-mode gradients, the perturbation machinery and training
//! loop, flatness diagnostics, and DICE-style structure attacks.

pub mod analysis;
pub mod attacks;
pub mod awp;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{CoreError, Result};
pub use exec::Execution;
