//! Dense tensors, a reverse-mode tape, and the AdamW optimizer.
//!
//! Everything is single-threaded with a fixed reduction order, so identical
//! inputs and seeds give bit-identical results on a given platform and
//! width. Training runs in `f32`; the same ops instantiated at `f64` back the
//! gradient checks.

mod float;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use float::Float;
pub use optim::{adamw_step, clip_grad_norm, AdamW, AdamWConfig};
pub use params::{Param, ParamSet};
pub use rng::{substream, Rng};
pub use tape::{mix, AttnGeom, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::log_sum_exp;

/// Sentinel target that [`Tape::cross_entropy`] skips.
pub const IGNORE_INDEX: usize = usize::MAX;
