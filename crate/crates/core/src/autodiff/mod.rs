//! Minimal reverse-mode autodiff used as the numeric substrate for the model
//! and losses. Double precision throughout.

mod tape;
mod tensor;

pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::{broadcast_shape, broadcast_zip, reduce_to_shape, Tensor};
