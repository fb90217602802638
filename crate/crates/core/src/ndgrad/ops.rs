//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tape::{broadcast_strides, gelu_parts, BinKind, Op, UnKind};
use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t super::Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes()[self.id].value.clone()
    }

    /// Single element of a scalar-valued var.
    pub fn item(&self) -> T {
        self.tape.nodes()[self.id].value.data()[0]
    }

    /// Same value, cut from the graph: no gradient flows back through it.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    fn rg(&self, others: &[Var<'t, T>]) -> bool {
        let nodes = self.tape.nodes();
        nodes[self.id].requires_grad || others.iter().any(|o| nodes[o.id].requires_grad)
    }

    fn emit(&self, value: Tensor<T>, op: Op<T>, rg: bool) -> Var<'t, T> {
        self.tape.push(value, op, rg)
    }

    /// Matrix product of `[m,k]` by `[k,n]`.
    pub fn matmul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul {sa:?} x {sb:?}")));
        }
        self.bmm_raw(b, 1, sa[0], sb[1], sa[1], false, false, vec![sa[0], sb[1]])
    }

    /// Batched product over all leading axes; `ta`/`tb` transpose the last two axes.
    pub fn bmm(self, b: Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(Error::dim(format!("bmm {sa:?} x {sb:?}")));
        }
        let (m, ka) = if ta {
            (sa[r - 1], sa[r - 2])
        } else {
            (sa[r - 2], sa[r - 1])
        };
        let (kb, n) = if tb {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if ka != kb {
            return Err(Error::dim(format!(
                "bmm inner dims {sa:?} x {sb:?} (ta={ta}, tb={tb})"
            )));
        }
        let batch = sa[..r - 2].iter().product();
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        self.bmm_raw(b, batch, m, n, ka, ta, tb, shape)
    }

    #[allow(clippy::too_many_arguments)]
    fn bmm_raw(
        self,
        b: Var<'t, T>,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
        ta: bool,
        tb: bool,
        shape: Vec<usize>,
    ) -> Result<Var<'t, T>> {
        let mut out = vec![T::zero(); batch * m * n];
        {
            let nodes = self.tape.nodes();
            let av = nodes[self.id].value.data();
            let bv = nodes[b.id].value.data();
            kernels::bgemm(batch, ta, tb, m, n, k, av, bv, &mut out, false);
        }
        let op = Op::MatMul {
            a: self.id,
            b: b.id,
            batch,
            m,
            n,
            k,
            ta,
            tb,
        };
        Ok(self.emit(Tensor::new(&shape, out)?, op, self.rg(&[b])))
    }

    /// `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let s = self.shape();
        let ws = w.shape();
        let d_in = *s.last().unwrap();
        if ws.len() != 2 || ws[0] != d_in {
            return Err(Error::dim(format!("linear input {s:?} with weight {ws:?}")));
        }
        let rows = self.len() / d_in;
        let mut y = self.reshape(&[rows, d_in])?.matmul(w)?;
        if let Some(b) = b {
            y = y.add(b.reshape(&[1, ws[1]])?)?;
        }
        let mut out_shape = s[..s.len() - 1].to_vec();
        out_shape.push(ws[1]);
        y.reshape(&out_shape)
    }

    pub fn len(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 2-D cross-correlation of `[B,C,H,W]` with `[O,C,k,k]` weights, zero padding.
    pub fn conv2d(
        self,
        w: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::dim(format!(
                "conv2d input {xs:?} with weight {ws:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::dim(format!(
                "conv2d kernel {k} larger than padded input {h}x{wd}"
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(Error::dim(format!(
                    "conv2d bias {:?} for {o} outputs",
                    b.shape()
                )));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let g = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let hw = ho * wo;
        let in_len = c * h * wd;
        let mut out = vec![T::zero(); bsz * o * hw];
        {
            let nodes = self.tape.nodes();
            let xv = nodes[self.id].value.data();
            let wv = nodes[w.id].value.data();
            let bv = bias.map(|b| nodes[b.id].value.data());
            let mut cols = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); g.cols_len()]
            };
            for bt in 0..bsz {
                let xsl = &xv[bt * in_len..(bt + 1) * in_len];
                let cs: &[T] = if g.is_pointwise() {
                    xsl
                } else {
                    kernels::im2col(xsl, &g, &mut cols);
                    &cols
                };
                let os = &mut out[bt * o * hw..(bt + 1) * o * hw];
                kernels::gemm(false, false, o, hw, g.cols_rows(), wv, cs, os, false);
                if let Some(bv) = bv {
                    for (oc, row) in os.chunks_mut(hw).enumerate() {
                        for v in row {
                            *v = *v + bv[oc];
                        }
                    }
                }
            }
        }
        let mut others = vec![w];
        others.extend(bias);
        let op = Op::Conv {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            batch: bsz,
            o,
            g,
        };
        Ok(self.emit(Tensor::new(&[bsz, o, ho, wo], out)?, op, self.rg(&others)))
    }

    fn binary(self, b: Var<'t, T>, kind: BinKind) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.len() != sb.len() {
            return Err(Error::dim(format!(
                "broadcast rank mismatch {sa:?} vs {sb:?}"
            )));
        }
        let mut out_shape = Vec::with_capacity(sa.len());
        for (&x, &y) in sa.iter().zip(&sb) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::dim(format!("cannot broadcast {sa:?} with {sb:?}")));
            }
            out_shape.push(x.max(y));
        }
        let f = |x: T, y: T| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let out: Vec<T> = {
            let nodes = self.tape.nodes();
            let av = nodes[self.id].value.data();
            let bv = nodes[b.id].value.data();
            if sa == out_shape && sb == out_shape {
                av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let ia = kernels::walk_offsets(&out_shape, &broadcast_strides(&sa, &out_shape));
                let ib = kernels::walk_offsets(&out_shape, &broadcast_strides(&sb, &out_shape));
                ia.iter().zip(&ib).map(|(&i, &j)| f(av[i], bv[j])).collect()
            }
        };
        let op = Op::Binary {
            kind,
            a: self.id,
            b: b.id,
        };
        Ok(self.emit(Tensor::new(&out_shape, out)?, op, self.rg(&[b])))
    }

    /// Elementwise sum; equal-rank shapes broadcast along size-1 axes.
    // fallible, so not `std::ops::Add`
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(b, BinKind::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(b, BinKind::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(b, BinKind::Mul)
    }

    fn map_unary(self, kind: UnKind) -> Var<'t, T> {
        let v = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let data = x
                .data()
                .iter()
                .map(|&v| match kind {
                    UnKind::Relu => v.max(T::zero()),
                    UnKind::Gelu => gelu_parts(v).0,
                    UnKind::Sigmoid => sigmoid(v),
                    UnKind::Abs => v.abs(),
                })
                .collect();
            Tensor::new(x.shape(), data).expect("same shape")
        };
        self.emit(v, Op::Unary { kind, x: self.id }, self.rg(&[]))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.map_unary(UnKind::Relu)
    }

    /// GELU, tanh approximation with cubic coefficient 0.044715.
    pub fn gelu(self) -> Var<'t, T> {
        self.map_unary(UnKind::Gelu)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.map_unary(UnKind::Sigmoid)
    }

    pub fn abs(self) -> Var<'t, T> {
        self.map_unary(UnKind::Abs)
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::c(c);
        let v = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            Tensor::new(x.shape(), x.data().iter().map(|&v| v * c).collect()).expect("same shape")
        };
        self.emit(v, Op::Scale { x: self.id, c }, self.rg(&[]))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::c(c);
        let v = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            Tensor::new(x.shape(), x.data().iter().map(|&v| v + c).collect()).expect("same shape")
        };
        self.emit(v, Op::AddScalar { x: self.id }, self.rg(&[]))
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax_lastdim(self) -> Var<'t, T> {
        let v = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let d = *x.shape().last().unwrap();
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(d) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    s = s + *v;
                }
                let inv = T::one() / s;
                for v in row.iter_mut() {
                    *v = *v * inv;
                }
            }
            Tensor::new(x.shape(), out).expect("same shape")
        };
        self.emit(v, Op::Softmax { x: self.id }, self.rg(&[]))
    }

    /// Normalize the last axis to zero mean and unit variance, then apply
    /// the optional `(gamma, beta)` affine.
    pub fn layer_norm(
        self,
        affine: Option<(Var<'t, T>, Var<'t, T>)>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let s = self.shape();
        let d = *s.last().unwrap();
        if let Some((g, b)) = affine {
            if g.shape() != [d] || b.shape() != [d] {
                return Err(Error::dim(format!(
                    "layer_norm affine {:?}/{:?} for width {d}",
                    g.shape(),
                    b.shape()
                )));
            }
        }
        let (out, xhat, rstd) = {
            let nodes = self.tape.nodes();
            let xv = nodes[self.id].value.data();
            let gb = affine.map(|(g, b)| (nodes[g.id].value.data(), nodes[b.id].value.data()));
            let rows = xv.len() / d;
            let mut xhat = vec![T::zero(); xv.len()];
            let mut rstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); xv.len()];
            let inv_d = T::c(1.0 / d as f64);
            for r in 0..rows {
                let xs = &xv[r * d..(r + 1) * d];
                let mean = xs.iter().copied().sum::<T>() * inv_d;
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let rs = T::one() / (var + T::c(eps)).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (xs[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = match gb {
                        Some((g, b)) => h * g[j] + b[j],
                        None => h,
                    };
                }
            }
            (out, xhat, rstd)
        };
        let others: Vec<Var<'t, T>> = affine.map(|(g, b)| vec![g, b]).unwrap_or_default();
        let op = Op::LayerNorm {
            x: self.id,
            affine: affine.map(|(g, b)| (g.id, b.id)),
            d,
            xhat,
            rstd,
        };
        Ok(self.emit(Tensor::new(&s, out)?, op, self.rg(&others)))
    }

    /// Mean over each 2×2 block of a `[B,C,H,W]` tensor.
    pub fn avg_pool2(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::dim(format!(
                "avg_pool2 needs [B,C,even,even], got {s:?}"
            )));
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let out = {
            let nodes = self.tape.nodes();
            let xv = nodes[self.id].value.data();
            let q = T::c(0.25);
            let mut out = vec![T::zero(); s[0] * s[1] * ho * wo];
            for p in 0..s[0] * s[1] {
                for i in 0..ho {
                    for j in 0..wo {
                        let base = p * h * w + 2 * i * w + 2 * j;
                        out[p * ho * wo + i * wo + j] =
                            (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]) * q;
                    }
                }
            }
            out
        };
        Ok(self.emit(
            Tensor::new(&[s[0], s[1], ho, wo], out)?,
            Op::AvgPool2 { x: self.id },
            self.rg(&[]),
        ))
    }

    /// Nearest-neighbour 2× upsampling of a `[B,C,H,W]` tensor.
    pub fn upsample_nearest2(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!(
                "upsample_nearest2 needs [B,C,H,W], got {s:?}"
            )));
        }
        let (h, w) = (s[2], s[3]);
        let idx: Vec<usize> = (0..s[0] * s[1])
            .flat_map(|p| {
                (0..2 * h)
                    .flat_map(move |i| (0..2 * w).map(move |j| p * h * w + (i / 2) * w + j / 2))
            })
            .collect();
        let out = {
            let nodes = self.tape.nodes();
            let xv = nodes[self.id].value.data();
            idx.iter().map(|&i| xv[i]).collect()
        };
        Ok(self.emit(
            Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?,
            Op::Upsample2 { x: self.id },
            self.rg(&[]),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        if self.shape() == shape {
            return Ok(self);
        }
        let v = self.value().reshape(shape)?;
        Ok(self.emit(v, Op::Reshape { x: self.id }, self.rg(&[])))
    }

    /// `out[i] = x[idx[i]]` reshaped to `shape`; the backward pass scatter-adds.
    pub fn gather(self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'t, T>> {
        let n = self.len();
        if idx.iter().any(|&i| i >= n) {
            return Err(Error::dim("gather index out of range"));
        }
        let out = {
            let nodes = self.tape.nodes();
            let xv = nodes[self.id].value.data();
            idx.iter().map(|&i| xv[i]).collect()
        };
        let t = Tensor::new(shape, out)?;
        Ok(self.emit(t, Op::Gather { x: self.id, idx }, self.rg(&[])))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let s = self.shape();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim(format!(
                "invalid permutation {perm:?} for {s:?}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let idx = kernels::permute_index(&s, perm);
        self.gather(idx.into(), &out_shape)
    }

    /// Cyclic shift: `out[i] = x[(i - shift) mod n]` along each axis.
    pub fn roll(self, shifts: &[isize]) -> Result<Var<'t, T>> {
        let s = self.shape();
        if shifts.len() != s.len() {
            return Err(Error::dim(format!("roll shifts {shifts:?} for {s:?}")));
        }
        let maps: Vec<Vec<usize>> = s
            .iter()
            .zip(shifts)
            .map(|(&n, &sh)| {
                (0..n)
                    .map(|i| (i as isize - sh).rem_euclid(n as isize) as usize)
                    .collect()
            })
            .collect();
        let idx = axis_map_index(&s, &maps);
        self.gather(idx.into(), &s)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::dim(format!(
                "narrow axis {axis} [{start}, +{len}) of {s:?}"
            )));
        }
        let maps: Vec<Vec<usize>> = s
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                if d == axis {
                    (start..start + len).collect()
                } else {
                    (0..n).collect()
                }
            })
            .collect();
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let idx = axis_map_index(&s, &maps);
        self.gather(idx.into(), &out_shape)
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = {
            let nodes = self.tape.nodes();
            nodes[self.id].value.data().iter().copied().sum::<T>()
        };
        self.emit(Tensor::scalar(s), Op::Sum { x: self.id }, self.rg(&[]))
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over the last axis, which is removed (rank-1 inputs give `[1]`).
    pub fn mean_lastdim(self) -> Var<'t, T> {
        let s = self.shape();
        let d = *s.last().unwrap();
        let out: Vec<T> = {
            let nodes = self.tape.nodes();
            let inv = T::c(1.0 / d as f64);
            nodes[self.id]
                .value
                .data()
                .chunks(d)
                .map(|r| r.iter().copied().sum::<T>() * inv)
                .collect()
        };
        let shape = if s.len() > 1 {
            s[..s.len() - 1].to_vec()
        } else {
            vec![1]
        };
        self.emit(
            Tensor::new(&shape, out).expect("shape"),
            Op::MeanLast { x: self.id, d },
            self.rg(&[]),
        )
    }

    /// Mean absolute difference, the L1 reconstruction distance.
    pub fn l1(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "l1 between {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self.sub(other)?.abs().mean())
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Flat source offsets when output coordinate `i` on axis `d` reads input
/// coordinate `maps[d][i]`.
pub(crate) fn axis_map_index(shape: &[usize], maps: &[Vec<usize>]) -> Vec<usize> {
    let st = kernels::strides(shape);
    let mut idx = vec![0usize];
    for (d, map) in maps.iter().enumerate() {
        let mut next = Vec::with_capacity(idx.len() * map.len());
        for &base in &idx {
            for &m in map {
                next.push(base + m * st[d]);
            }
        }
        idx = next;
    }
    idx
}
