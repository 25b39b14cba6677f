//! A minimal differentiable kernel set: dilated/strided/transposed 2D
//! convolution, batch normalization, leaky ReLU, concatenation, addition,
//! center crop and MSE, with reverse-mode gradients through [`Tape`].

pub mod conv;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use conv::{conv2d, conv2d_transpose, ConvGeom, ConvSpec};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{batch_norm, concat, leaky_relu, mse_loss, Mode, RunningStats};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
