//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and the ids of its
//! inputs. Node ids are assigned in execution order, so walking ids
//! downwards from the loss is a reverse topological traversal: each node is
//! visited exactly once and its gradient is complete by the time it is
//! visited. Gradients accumulate additively into inputs.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnKind {
    Relu,
    Gelu,
    Sigmoid,
    Abs,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
        ta: bool,
        tb: bool,
    },
    Conv {
        x: usize,
        w: usize,
        bias: Option<usize>,
        batch: usize,
        o: usize,
        g: ConvGeom,
    },
    Binary {
        kind: BinKind,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnKind,
        x: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    LayerNorm {
        x: usize,
        affine: Option<(usize, usize)>,
        d: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    AvgPool2 {
        x: usize,
    },
    Upsample2 {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Gather {
        x: usize,
        idx: Rc<[usize]>,
    },
    Sum {
        x: usize,
    },
    MeanLast {
        x: usize,
        d: usize,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Option<Vec<Option<Vec<T>>>>>,
    nonfinite: Cell<Option<usize>>,
    seed_scale: Cell<f64>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(None),
            nonfinite: Cell::new(None),
            seed_scale: Cell::new(1.0),
        }
    }

    /// Input that gradients are reported for when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Negative-control hook: scales the seed gradient so every reported
    /// gradient is off by `factor`.
    pub fn corrupt_backward(&self, factor: f64) {
        self.seed_scale.set(factor);
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.nonfinite.get().is_none() && !value.is_finite() {
            self.nonfinite.set(Some(id));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    /// Error if any recorded value was NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite.get() {
            None => Ok(()),
            Some(id) => Err(Error::Numerical(format!(
                "non-finite value produced at node {id}"
            ))),
        }
    }

    /// Discard gradients so `backward` may run again.
    pub fn reset_grads(&self) {
        *self.grads.borrow_mut() = None;
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.as_ref()?.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Tensor::new(&shape, g.clone()).ok()
    }

    /// Populate gradients of every `requires_grad` leaf with respect to `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        if self.grads.borrow().is_some() {
            return Err(Error::Backward(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Backward(
                "loss is detached from every parameter".into(),
            ));
        }
        self.check_finite()?;

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::c(self.seed_scale.get())]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }
}

fn acc<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    id: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); n]))
}

/// Strides of `shape` broadcast against `out`, zero on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = kernels::strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

pub(crate) fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let k = T::c(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::c(0.044715);
    let (half, one) = (T::c(0.5), T::one());
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * k * (one + T::c(3.0) * a * x * x);
    (y, dy)
}

fn backprop<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            n,
            k,
            ta,
            tb,
        } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(ga) = acc(nodes, grads, a) {
                // dA = dC · op(B)ᵀ, laid out to match A's storage
                if ta {
                    kernels::bgemm(batch, tb, true, k, m, n, bv, g, ga, true);
                } else {
                    kernels::bgemm(batch, false, !tb, m, k, n, g, bv, ga, true);
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                if tb {
                    kernels::bgemm(batch, true, ta, n, k, m, g, av, gb, true);
                } else {
                    kernels::bgemm(batch, !ta, false, k, n, m, av, g, gb, true);
                }
            }
        }
        &Op::Conv {
            x,
            w,
            bias,
            batch,
            o,
            g: geom,
        } => {
            let xv = nodes[x].value.data();
            let wv = nodes[w].value.data();
            let hw = geom.ho * geom.wo;
            let in_len = geom.c * geom.h * geom.w;
            let kk = geom.cols_rows();
            if let Some(bi) = bias {
                if let Some(gb) = acc(nodes, grads, bi) {
                    for bt in 0..batch {
                        for oc in 0..o {
                            let s: T = g[(bt * o + oc) * hw..(bt * o + oc + 1) * hw]
                                .iter()
                                .copied()
                                .sum();
                            gb[oc] = gb[oc] + s;
                        }
                    }
                }
            }
            let mut cols = if geom.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); geom.cols_len()]
            };
            if nodes[w].requires_grad {
                let mut gw = grads[w].take().unwrap_or_else(|| vec![T::zero(); wv.len()]);
                for bt in 0..batch {
                    let xs = &xv[bt * in_len..(bt + 1) * in_len];
                    let cs: &[T] = if geom.is_pointwise() {
                        xs
                    } else {
                        kernels::im2col(xs, &geom, &mut cols);
                        &cols
                    };
                    kernels::gemm(
                        false,
                        true,
                        o,
                        kk,
                        hw,
                        &g[bt * o * hw..(bt + 1) * o * hw],
                        cs,
                        &mut gw,
                        true,
                    );
                }
                grads[w] = Some(gw);
            }
            if let Some(gx) = acc(nodes, grads, x) {
                for bt in 0..batch {
                    let gs = &g[bt * o * hw..(bt + 1) * o * hw];
                    let gxs = &mut gx[bt * in_len..(bt + 1) * in_len];
                    if geom.is_pointwise() {
                        kernels::gemm(true, false, kk, hw, o, wv, gs, gxs, true);
                    } else {
                        kernels::gemm(true, false, kk, hw, o, wv, gs, &mut cols, false);
                        kernels::col2im(&cols, &geom, gxs);
                    }
                }
            }
        }
        &Op::Binary { kind, a, b } => {
            let out_shape = node.value.shape();
            let ash = nodes[a].value.shape();
            let bsh = nodes[b].value.shape();
            let same = ash == out_shape && bsh == out_shape;
            let (ia, ib) = if same {
                (None, None)
            } else {
                (
                    Some(kernels::walk_offsets(
                        out_shape,
                        &broadcast_strides(ash, out_shape),
                    )),
                    Some(kernels::walk_offsets(
                        out_shape,
                        &broadcast_strides(bsh, out_shape),
                    )),
                )
            };
            let at = |i: usize, ix: &Option<Vec<usize>>| ix.as_ref().map_or(i, |v| v[i]);
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(ga) = acc(nodes, grads, a) {
                for (i, &gi) in g.iter().enumerate() {
                    let d = match kind {
                        BinKind::Add | BinKind::Sub => gi,
                        BinKind::Mul => gi * bv[at(i, &ib)],
                    };
                    let j = at(i, &ia);
                    ga[j] = ga[j] + d;
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                for (i, &gi) in g.iter().enumerate() {
                    let d = match kind {
                        BinKind::Add => gi,
                        BinKind::Sub => -gi,
                        BinKind::Mul => gi * av[at(i, &ia)],
                    };
                    let j = at(i, &ib);
                    gb[j] = gb[j] + d;
                }
            }
        }
        &Op::Unary { kind, x } => {
            let xv = nodes[x].value.data();
            let yv = node.value.data();
            if let Some(gx) = acc(nodes, grads, x) {
                for i in 0..g.len() {
                    let d = match kind {
                        UnKind::Relu => {
                            if xv[i] > T::zero() {
                                g[i]
                            } else {
                                T::zero()
                            }
                        }
                        UnKind::Gelu => g[i] * gelu_parts(xv[i]).1,
                        UnKind::Sigmoid => g[i] * yv[i] * (T::one() - yv[i]),
                        UnKind::Abs => {
                            if xv[i] > T::zero() {
                                g[i]
                            } else if xv[i] < T::zero() {
                                -g[i]
                            } else {
                                T::zero()
                            }
                        }
                    };
                    gx[i] = gx[i] + d;
                }
            }
        }
        &Op::Scale { x, c } => {
            if let Some(gx) = acc(nodes, grads, x) {
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a = *a + b * c;
                }
            }
        }
        &Op::AddScalar { x } | &Op::Reshape { x } => {
            if let Some(gx) = acc(nodes, grads, x) {
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
        &Op::Softmax { x } => {
            let y = node.value.data();
            let d = *node.value.shape().last().unwrap();
            if let Some(gx) = acc(nodes, grads, x) {
                for r in 0..y.len() / d {
                    let ys = &y[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = gx[r * d + j] + ys[j] * (gs[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            affine,
            d,
            xhat,
            rstd,
        } => {
            let (x, d) = (*x, *d);
            let rows = xhat.len() / d;
            let gamma = affine.map(|(gm, _)| nodes[gm].value.data());
            if let Some((gm, bt)) = *affine {
                if let Some(gg) = acc(nodes, grads, gm) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, bt) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
            }
            if let Some(gx) = acc(nodes, grads, x) {
                let inv_d = T::c(1.0 / d as f64);
                let mut gh = vec![T::zero(); d];
                for r in 0..rows {
                    let xs = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        gh[j] = g[r * d + j] * gamma.map_or(T::one(), |gm| gm[j]);
                    }
                    let m1: T = gh.iter().copied().sum::<T>() * inv_d;
                    let m2: T = gh.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                    for j in 0..d {
                        gx[r * d + j] = gx[r * d + j] + rstd[r] * (gh[j] - m1 - xs[j] * m2);
                    }
                }
            }
        }
        &Op::AvgPool2 { x } => {
            let s = nodes[x].value.shape();
            let (h, w) = (s[2], s[3]);
            let (ho, wo) = (h / 2, w / 2);
            if let Some(gx) = acc(nodes, grads, x) {
                let q = T::c(0.25);
                for p in 0..s[0] * s[1] {
                    for i in 0..ho {
                        for j in 0..wo {
                            let v = g[p * ho * wo + i * wo + j] * q;
                            let base = p * h * w + 2 * i * w + 2 * j;
                            for off in [0, 1, w, w + 1] {
                                gx[base + off] = gx[base + off] + v;
                            }
                        }
                    }
                }
            }
        }
        &Op::Upsample2 { x } => {
            let s = nodes[x].value.shape();
            let (h, w) = (s[2], s[3]);
            let w2 = 2 * w;
            if let Some(gx) = acc(nodes, grads, x) {
                for p in 0..s[0] * s[1] {
                    for i in 0..h {
                        for j in 0..w {
                            let base = p * 4 * h * w + 2 * i * w2 + 2 * j;
                            let v = g[base] + g[base + 1] + g[base + w2] + g[base + w2 + 1];
                            gx[p * h * w + i * w + j] = gx[p * h * w + i * w + j] + v;
                        }
                    }
                }
            }
        }
        Op::Gather { x, idx } => {
            if let Some(gx) = acc(nodes, grads, *x) {
                for (&j, &gi) in idx.iter().zip(g) {
                    gx[j] = gx[j] + gi;
                }
            }
        }
        &Op::Sum { x } => {
            if let Some(gx) = acc(nodes, grads, x) {
                for a in gx.iter_mut() {
                    *a = *a + g[0];
                }
            }
        }
        &Op::MeanLast { x, d } => {
            if let Some(gx) = acc(nodes, grads, x) {
                let inv = T::c(1.0 / d as f64);
                for (i, a) in gx.iter_mut().enumerate() {
                    *a = *a + g[i / d] * inv;
                }
            }
        }
    }
}
