//! Dense tensors with reverse-mode automatic differentiation.

mod dd;
mod gradcheck;
pub mod kernels;
mod ops;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use dd::Dd;
pub use gradcheck::{
    grad_check, grad_check_precise, grad_check_with, rel_err, Coords, GradCheckOptions, GradReport,
    Objective, FD_STEP, MAX_COORDS_PER_TENSOR,
};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Uniform(±√(1/fan_in)) initializer for conv and linear weights.
pub fn init_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    init_uniform_gain(rng, shape, fan_in, 1.0)
}

/// Uniform(±gain·√(1/fan_in)).
pub fn init_uniform_gain<T: Scalar>(
    rng: &mut Rng,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Tensor<T> {
    let bound = gain * (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::c(rng.uniform_range(-bound, bound)))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Tensor of i.i.d. uniform values in `[lo, hi)`.
pub fn rand_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| T::c(rng.uniform_range(lo, hi))).collect(),
    )
    .expect("shape")
}

/// Tensor of i.i.d. standard normals.
pub fn rand_normal<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::c(rng.normal())).collect()).expect("shape")
}
