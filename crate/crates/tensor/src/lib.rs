//! Dense row-major tensors, numeric kernels and a reverse-mode
//! differentiation tape.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles. Convolutions, matrix products and the
//! selective scan report their multiply-accumulate counts to [`macs`].

pub mod check;
mod error;
pub mod kernels;
pub mod macs;
mod ops;
mod real;
pub mod serialize;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use kernels::conv::Conv2dParams;
pub use ops::ScanInputs;
pub use real::{DType, Real};
pub use tape::{BackwardCtx, Gradients, Tape, Var};
pub use tensor::{numel, strides, Tensor};
