//! Dense arithmetic, parameter containers, gradient checking and Adam.

mod adam;
mod grad;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use grad::{
    finite_difference, grad, gradcheck, rel_error, GradCheckReport, GroupCheck, Objective,
};
pub use params::ParamSet;
pub use tensor::Tensor;
pub(crate) use tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · σ(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}
