//! Reverse-mode differentiation over dense `f64` tensors, plus the gradient
//! checker, the Adam optimizer and the checkpoint format built on it.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use gradcheck::{
    check_tape_fn, finite_diff_check, relative_error, tape_gradients, tape_value, GradCheckReport,
};
pub use tape::{Gradients, Lerp, Tape, Var};
pub use tensor::Tensor;
