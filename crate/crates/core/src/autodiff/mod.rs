//! Dense/sparse tensors, a reverse-mode tape, Adam, and gradient checking.

mod adam;
mod check;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{
    analytic_gradient, compare_gradients, finite_difference_check, numeric_gradient, GradientCheck,
};
pub use params::{GradientMap, ParamId, ParamStore};
pub use tape::{BnRunning, Tape, Var};
pub use tensor::{gemm, SparseMatrix, Tensor};
