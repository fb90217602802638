use std::fmt::Debug;
use std::iter::Sum;

/// Element type of a [`Tensor`](super::Tensor): `f32` for training, `f64` for verification.
pub trait Scalar: num_traits::Float + Default + Debug + Sum + Send + Sync + 'static {
    /// Checkpoint dtype tag.
    const DTYPE: u8;
    const BYTES: usize;

    fn c(v: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Strided `c = a·b (+ c)` through an optimized kernel; `false` when the
    /// type has none and the caller must fall back to the generic loop.
    #[allow(clippy::too_many_arguments)]
    fn fast_gemm(
        _m: usize,
        _n: usize,
        _k: usize,
        _a: (&[Self], isize, isize),
        _b: (&[Self], isize, isize),
        _c: &mut [Self],
        _accumulate: bool,
    ) -> bool {
        false
    }
}

impl Scalar for f32 {
    fn fast_gemm(
        m: usize,
        n: usize,
        k: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        c: &mut [Self],
        accumulate: bool,
    ) -> bool {
        assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: lengths checked above; strides describe dense m×k, k×n and
        // row-major m×n matrices inside those slices.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.0.as_ptr(),
                a.1,
                a.2,
                b.0.as_ptr(),
                b.1,
                b.2,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        true
    }

    const DTYPE: u8 = 0;
    const BYTES: usize = 4;

    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    fn fast_gemm(
        m: usize,
        n: usize,
        k: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        c: &mut [Self],
        accumulate: bool,
    ) -> bool {
        assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: lengths checked above; strides describe dense m×k, k×n and
        // row-major m×n matrices inside those slices.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.0.as_ptr(),
                a.1,
                a.2,
                b.0.as_ptr(),
                b.1,
                b.2,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        true
    }

    const DTYPE: u8 = 1;
    const BYTES: usize = 8;

    #[inline]
    fn c(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
