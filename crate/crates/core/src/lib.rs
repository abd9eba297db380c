//! Self-distillation differentiable architecture search.
//!
//! A cell-based supernet over a vector-feature operation set is trained by
//! alternating first-order updates of the architecture logits (on a
//! validation split) and the network weights (on a training split). After a
//! warm-up phase, both updates carry a regularizer pulling the current
//! output distribution towards the averaged outputs the supernet produced
//! over the previous `K` epochs.
//!
//! Module map:
//!
//! - [`diffcore`]: dense reverse-mode differentiation engine and seeded RNG.
//! - [`searchspace`]: operations, cell topology, supernet, genotypes.
//! - [`datasets`]: synthetic classification data and stratified splits.
//! - [`distill`]: teacher probability storage, voting and correlation metrics.
//! - [`bilevel`]: optimizers and the warm-up / self-distillation search loop.
//! - [`sharpness`]: gradient-norm sharpness and Hessian eigenvalue estimates.
//! - [`benchmark`]: exhaustive oracle tables and method scoring.

pub mod benchmark;
pub mod bilevel;
pub mod datasets;
pub mod diffcore;
pub mod distill;
mod error;
pub mod io;
pub mod searchspace;
pub mod sharpness;

pub use error::{Error, Result};
