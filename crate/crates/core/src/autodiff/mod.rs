//! Dense reverse-mode automatic differentiation, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod matrix;
mod tape;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use gradcheck::{
    grad_check, grad_check_steps, primitive_checks, relative_error, GradCheckReport, DEFAULT_EPS,
};
pub use matrix::Matrix;
pub use tape::{sigmoid, Gradients, Mask, Tape, Var};
