//! Dense `f64` tensors, value kernels, and a reverse-mode tape.

pub mod gradcheck;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_at, relative_error};
pub use ops::{layer_norm, leaky_relu, linear, softmax_rows, DEFAULT_LEAKY_SLOPE};
pub use params::{Param, ParamGrads, ParamGroup, ParamId, ParamStore};
pub use tape::{BucketMatrix, Gradients, Tape, Var};
pub use tensor::Tensor;
