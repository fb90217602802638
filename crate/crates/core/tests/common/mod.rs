#![allow(dead_code)]

use sdid::ndgrad::{rand_uniform, Rng, Tensor, Var};
use sdid::Result;

pub fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

/// Scalar probe `Σ wᵢ·yᵢ` with fixed pseudo-random weights in [0.5, 1.5).
pub fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = Rng::new(seed ^ 0xABCD);
    let w = y
        .tape()
        .constant(rand_uniform(&mut rng, &y.shape(), 0.5, 1.5));
    Ok(y.mul(w)?.sum())
}

pub fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    rand_uniform(&mut Rng::new(seed), shape, lo, hi)
}
