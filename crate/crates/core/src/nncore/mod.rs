//! Minimal tensor and layer kernels for the target CNN, the HyperNet MLPs and the
//! attack network.
//!
//! Every kernel is generic over [`Real`] so the same code runs in `f32` for training
//! and inference and in `f64` for finite-difference gradient checks. Backward passes
//! are hand-written per layer and composed by the caller; there is no graph engine.

mod gemm;
mod loss;
mod mlp;
mod target;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use gemm::matmul;
pub use loss::{argmax, cross_entropy, cross_entropy_grad, log_softmax, softmax};
pub use mlp::{DenseParams, MlpCache, MlpParams, MlpSpec};
pub use target::{
    grad_input, grad_weights, target_backward, target_forward, target_forward_batch, ActivationCache,
    ImageShape, LayerGeometry, LayerParams, LayerSpec, TargetGrads, TargetNetSpec, TargetWeights,
};
pub use tensor::{read_blob, write_blob, Tensor};
pub(crate) use tensor::read_u32;

/// Scalar type the kernels run on.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// `C = alpha * A * B + beta * C` over strided row/column layouts.
    ///
    /// Callers go through [`matmul`], which checks bounds before delegating here.
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

pub(crate) fn all_finite<T: Real>(xs: &[T]) -> bool {
    xs.iter().all(|v| v.is_finite())
}
