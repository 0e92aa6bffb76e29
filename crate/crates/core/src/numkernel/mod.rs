//! Dense linear algebra, activations, initialization and the Adam optimizer.
//!
//! Everything is `f64` and row-major. Reductions always run in ascending index
//! order so results are reproducible bit-for-bit.

mod adam;
mod init;
mod matrix;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use init::{xavier_bound, xavier_init, Seed};
pub use matrix::{matmul, matvec, matvec_transposed, outer, relu, relu_backward, Matrix};

pub(crate) use matrix::{relu_backward_slice, relu_slice};
