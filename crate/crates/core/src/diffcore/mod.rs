//! Minimal dense reverse-mode differentiation.
//!
//! Tensors are row-major and usually 2-D (`batch × features`). A [`Tape`] is
//! built fresh for every forward pass: leaves are either parameters drawn
//! from a [`ParamStore`] or constants, and every primitive appends one node.
//! [`Tape::backward`] walks the nodes once in reverse and returns gradients
//! keyed by [`ParamId`].
//!
//! Everything is generic over [`Real`] so that `f32` can be used for timing
//! comparisons; the rest of the crate uses `f64`.

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::{derive_seed, draw, Distribution, RngState};
pub use tape::{softmax_in_place as softmax_row, Tape, Var};
pub use tensor::{Real, Tensor};
