//! Raw slice kernels shared by forward and backward passes.

use rayon::prelude::*;

use super::Scalar;

const PAR_THRESHOLD: usize = 1 << 18;

/// `c (+)= op(a) · op(b)` with `op(a)` m×k and `op(b)` k×n.
///
/// `ta`: `a` is stored k×m. `tb`: `b` is stored n×k. Each output row is
/// computed by one thread in a fixed order, so results do not depend on the
/// thread count.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let (mi, ni, ki) = (m as isize, n as isize, k as isize);
    let sa = if ta { (a, 1, mi) } else { (a, ki, 1) };
    let sb = if tb { (b, 1, ki) } else { (b, ni, 1) };
    if T::fast_gemm(m, n, k, sa, sb, c, accumulate) {
        return;
    }
    let bt;
    let b = if tb {
        bt = transpose(b, n, k);
        &bt[..]
    } else {
        b
    };
    let row = |i: usize, crow: &mut [T]| {
        if !accumulate {
            crow.fill(T::zero());
        }
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| row(i, crow));
    } else {
        c.chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| row(i, crow));
    }
}

/// Batched [`gemm`]: `batch` independent products over contiguous slabs.
#[allow(clippy::too_many_arguments)]
pub fn bgemm<T: Scalar>(
    batch: usize,
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let (sa, sb, sc) = (m * k, k * n, m * n);
    let one = |i: usize, cs: &mut [T]| {
        gemm(
            ta,
            tb,
            m,
            n,
            k,
            &a[i * sa..(i + 1) * sa],
            &b[i * sb..(i + 1) * sb],
            cs,
            accumulate,
        )
    };
    if batch * sc * k >= PAR_THRESHOLD && batch > 1 && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(sc)
            .enumerate()
            .for_each(|(i, cs)| one(i, cs));
    } else {
        c.chunks_mut(sc).enumerate().for_each(|(i, cs)| one(i, cs));
    }
}

/// Transpose a rows×cols matrix.
pub fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = x[r * cols + c];
                }
            }
        }
    }
    out
}

/// Convolution geometry for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn cols_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols_len(&self) -> usize {
        self.cols_rows() * self.ho * self.wo
    }

    /// The 1×1/stride 1/no pad case, where im2col is the identity.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one [C,H,W] image into a [C·k·k, Ho·Wo] matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw_o = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * hw_o..(row + 1) * hw_o];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize {
                            T::zero()
                        } else {
                            srow[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into an image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let hw_o = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &mut x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let src = &cols[row * hw_o..(row + 1) * hw_o];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            drow[jj as usize] = drow[jj as usize] + src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source offset for every output element of a permutation, in output order.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    walk_offsets(&out_shape, &src_strides)
}

/// Offsets `Σ idx[d]·strides[d]` for every multi-index of `shape`, row-major.
pub fn walk_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let nd = shape.len();
    if nd == 0 {
        out.push(0);
        return out;
    }
    let inner = shape[nd - 1];
    let inner_stride = strides[nd - 1];
    let mut idx = vec![0usize; nd];
    let mut base = 0usize;
    loop {
        out.extend((0..inner).map(|j| base + j * inner_stride));
        // advance the outer multi-index
        let mut d = nd - 1;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            base -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(ta: bool, tb: bool, m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_all_transposes() {
        let (m, n, k) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(ta, tb, m, n, k, &a, &b, &mut c, false);
                let r = naive(ta, tb, m, n, k, &a, &b);
                for (x, y) in c.iter().zip(&r) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            c: 2,
            h: 5,
            w: 4,
            k: 3,
            stride: 2,
            pad: 1,
            ho: 3,
            wo: 2,
        };
        let x: Vec<f64> = (0..g.c * g.h * g.w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.cols_len()).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut cols = vec![0.0; g.cols_len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn permute_index_transposes() {
        // [2,3] -> [3,2]
        assert_eq!(permute_index(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }
}
