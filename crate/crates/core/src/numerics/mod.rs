//! Dense tensors, a reverse-mode tape, Adam, and checkpoint I/O.
//!
//! Every trainable weight lives in a [`ParameterStore`]. A forward pass binds
//! the store onto a fresh [`Tape`], records kernels, and `backward` fills in
//! gradients that [`ParameterStore::accumulate`] folds back into the store.
//! The engine is generic over [`Real`]: training runs in `f32`, gradient
//! checks re-run the same graph in `f64`.

mod adam;
mod backward;
mod checkpoint;
pub mod gradcheck;
mod kernels;
mod params;
mod real;
pub(crate) mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{Bound, Parameter, ParameterStore};
pub use real::Real;
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
