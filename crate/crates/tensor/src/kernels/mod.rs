//! Plain forward/adjoint kernels on [`Tensor`](crate::Tensor) values.

pub mod broadcast;
pub mod conv;
pub mod dft;
pub mod index;
pub mod matmul;
pub mod scan;
