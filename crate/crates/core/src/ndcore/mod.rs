//! Minimal dense numeric kernel.

mod dual;
mod gradcheck;
pub mod optim;
mod params;
mod tensor;

pub use dual::{Dual, Real};
pub use gradcheck::{compare_gradients, finite_diff_grad, GradComparison, DEFAULT_STEP, NEGLIGIBLE};
pub use params::{add_scaled, axpy, check_same_shape, dot, l2_norm, sgd_step, FlatParams, Tensors};
pub use tensor::{linear_forward, mse, Matrix, Vector};

pub(crate) use tensor::check_len;
