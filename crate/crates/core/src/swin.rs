//! Windowed multi-head self-attention and the two-branch down/up blocks.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndgrad::{Scalar, Tensor, Var};
use crate::nn::{Bound, Conv, Init, LayerNorm, Linear, ParamId};

const MASKED: f64 = -1e9;

/// Geometry and width settings shared by every block of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwinConfig {
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub eps: f64,
}

/// `[B,H,W,d]` → `[B·(H/M)·(W/M), M², d]`, windows in row-major order.
pub fn window_partition<'t, T: Scalar>(x: Var<'t, T>, m: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || m == 0 || !s[1].is_multiple_of(m) || !s[2].is_multiple_of(m) {
        return Err(Error::dim(format!(
            "window_partition of {s:?} with window {m}"
        )));
    }
    let (b, h, w, d) = (s[0], s[1], s[2], s[3]);
    x.reshape(&[b, h / m, m, w / m, m, d])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * (h / m) * (w / m), m * m, d])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<'t, T: Scalar>(
    x: Var<'t, T>,
    m: usize,
    h: usize,
    w: usize,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3
        || m == 0
        || !h.is_multiple_of(m)
        || !w.is_multiple_of(m)
        || s[1] != m * m
        || !s[0].is_multiple_of((h / m) * (w / m))
    {
        return Err(Error::dim(format!(
            "window_reverse of {s:?} into {h}x{w} with window {m}"
        )));
    }
    let nw = (h / m) * (w / m);
    let (b, d) = (s[0] / nw, s[2]);
    x.reshape(&[b, h / m, w / m, m, m, d])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, h, w, d])
}

/// Relative-position index for an M×M window: entry `i·M²+j` selects the
/// bias-table row for query token `i` and key token `j`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m;
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / m, i % m);
        for j in 0..n {
            let (yj, xj) = (j / m, j % m);
            let dy = yi + m - 1 - yj;
            let dx = xi + m - 1 - xj;
            idx.push(dy * span + dx);
        }
    }
    idx
}

/// Region label of each pixel after the cyclic shift by `s`: the three
/// bands `[0,H−M)`, `[H−M,H−s)`, `[H−s,H)` along each axis.
fn region_labels(h: usize, w: usize, m: usize, s: usize) -> Vec<usize> {
    let band = |i: usize, n: usize| {
        if i < n - m {
            0
        } else if i < n - s {
            1
        } else {
            2
        }
    };
    (0..h)
        .flat_map(|i| (0..w).map(move |j| band(i, h) * 3 + band(j, w)))
        .collect()
}

/// Additive attention mask for shifted windows, shape `[nW, M², M²]`:
/// 0 where query and key come from the same region, −1e9 otherwise.
pub fn shifted_attention_mask<T: Scalar>(h: usize, w: usize, m: usize) -> Result<Tensor<T>> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::dim(format!(
            "shifted mask for {h}x{w} with window {m}"
        )));
    }
    let labels = region_labels(h, w, m, m / 2);
    let n = m * m;
    let (nh, nw) = (h / m, w / m);
    let mut out = Vec::with_capacity(nh * nw * n * n);
    for wi in 0..nh {
        for wj in 0..nw {
            let lab: Vec<usize> = (0..n)
                .map(|t| labels[(wi * m + t / m) * w + wj * m + t % m])
                .collect();
            for &a in &lab {
                for &b in &lab {
                    out.push(if a == b { T::zero() } else { T::c(MASKED) });
                }
            }
        }
    }
    Tensor::new(&[nh * nw, n, n], out)
}

/// One pre-norm attention block: `z + WMSA(LN(z))`, then `z + MLP(LN(z))`.
#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub shifted: bool,
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub bias_table: ParamId,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    rel_index: Rc<[usize]>,
}

impl SwinBlock {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        dim: usize,
        cfg: &SwinConfig,
        shifted: bool,
    ) -> Result<Self> {
        if cfg.heads == 0 || !dim.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "width {dim} not divisible by {} heads",
                cfg.heads
            )));
        }
        if cfg.window == 0 || cfg.mlp_ratio == 0 {
            return Err(Error::Config(
                "window and mlp_ratio must be positive".into(),
            ));
        }
        let m = cfg.window;
        let hidden = dim * cfg.mlp_ratio;
        Ok(SwinBlock {
            dim,
            heads: cfg.heads,
            window: m,
            shifted,
            ln1: LayerNorm::new(&mut init.scope("ln1"), dim, cfg.eps)?,
            q: Linear::new(&mut init.scope("q"), dim, dim, false)?,
            k: Linear::new(&mut init.scope("k"), dim, dim, false)?,
            v: Linear::new(&mut init.scope("v"), dim, dim, false)?,
            proj: Linear::new(&mut init.scope("proj"), dim, dim, true)?,
            bias_table: init.tensor(
                "rel_bias",
                Tensor::zeros(&[(2 * m - 1) * (2 * m - 1), cfg.heads]),
            )?,
            ln2: LayerNorm::new(&mut init.scope("ln2"), dim, cfg.eps)?,
            fc1: Linear::new(&mut init.scope("fc1"), dim, hidden, true)?,
            fc2: Linear::new(&mut init.scope("fc2"), hidden, dim, true)?,
            rel_index: relative_position_index(m).into(),
        })
    }

    pub fn shift(&self) -> usize {
        if self.shifted {
            self.window / 2
        } else {
            0
        }
    }

    pub fn numel(dim: usize, cfg: &SwinConfig) -> usize {
        let m = cfg.window;
        let hidden = dim * cfg.mlp_ratio;
        4 * dim
            + 3 * dim * dim
            + Linear::numel(dim, dim, true)
            + (2 * m - 1) * (2 * m - 1) * cfg.heads
            + Linear::numel(dim, hidden, true)
            + Linear::numel(hidden, dim, true)
    }

    pub fn rel_index(&self) -> &[usize] {
        &self.rel_index
    }

    /// Bias table gathered to `[1, heads, M², M²]`.
    fn position_bias<'t, T: Scalar>(&self, p: &Bound<'t, T>) -> Result<Var<'t, T>> {
        let n = self.window * self.window;
        let h = self.heads;
        let idx: Vec<usize> = (0..h)
            .flat_map(|hh| self.rel_index.iter().map(move |&r| r * h + hh))
            .collect();
        p[self.bias_table].gather(idx.into(), &[1, h, n, n])
    }

    /// Attention within each window of `[nW·B, M², d]` tokens. `mask`, when
    /// given, is `[nW, M², M²]` and is added to the logits of every image.
    pub fn wmsa<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        let n = self.window * self.window;
        if s.len() != 3 || s[1] != n || s[2] != self.dim {
            return Err(Error::dim(format!(
                "wmsa input {s:?}, expected [_, {n}, {}]",
                self.dim
            )));
        }
        let (bw, h, hd) = (s[0], self.heads, self.dim / self.heads);
        let split = |v: Var<'t, T>| v.reshape(&[bw, n, h, hd])?.permute(&[0, 2, 1, 3]);
        let q = split(self.q.forward(p, x)?)?;
        let k = split(self.k.forward(p, x)?)?;
        let v = split(self.v.forward(p, x)?)?;
        let mut logits = q.bmm(k, false, true)?.scale(1.0 / (hd as f64).sqrt());
        logits = logits.add(self.position_bias(p)?)?;
        if let Some(mask) = mask {
            let nw = mask.shape()[0];
            if mask.shape() != [nw, n, n] || bw % nw != 0 {
                return Err(Error::dim(format!(
                    "mask {:?} for {bw} windows of {n} tokens",
                    mask.shape()
                )));
            }
            let mv = x.tape().constant(mask.clone().reshape(&[1, nw, 1, n, n])?);
            logits = logits
                .reshape(&[bw / nw, nw, h, n, n])?
                .add(mv)?
                .reshape(&[bw, h, n, n])?;
        }
        let out = logits.softmax_lastdim().bmm(v, false, false)?;
        let merged = out.permute(&[0, 2, 1, 3])?.reshape(&[bw, n, self.dim])?;
        self.proj.forward(p, merged)
    }

    /// Apply the block to channel-last features `[B,H,W,d]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = z.shape();
        if s.len() != 4 || s[3] != self.dim {
            return Err(Error::dim(format!(
                "swin block of width {} got {s:?}",
                self.dim
            )));
        }
        let (hh, ww, m) = (s[1], s[2], self.window);
        if hh % m != 0 || ww % m != 0 {
            return Err(Error::dim(format!("{hh}x{ww} not divisible by window {m}")));
        }
        let sh = self.shift() as isize;
        let mut a = self.ln1.forward(p, z)?;
        let mask = if sh > 0 {
            a = a.roll(&[0, -sh, -sh, 0])?;
            Some(shifted_attention_mask::<T>(hh, ww, m)?)
        } else {
            None
        };
        let wins = window_partition(a, m)?;
        let att = self.wmsa(p, wins, mask.as_ref())?;
        let mut a = window_reverse(att, m, hh, ww)?;
        if sh > 0 {
            a = a.roll(&[0, sh, sh, 0])?;
        }
        let z = z.add(a)?;
        let hidden = self.fc1.forward(p, self.ln2.forward(p, z)?)?.gelu();
        z.add(self.fc2.forward(p, hidden)?)
    }
}

/// Regular-window and shifted-window branches on the same input, summed.
#[derive(Clone, Debug)]
pub struct TwoBranch {
    pub regular: SwinBlock,
    pub shifted: SwinBlock,
}

impl TwoBranch {
    fn new<T: Scalar>(init: &mut Init<'_, T>, dim: usize, cfg: &SwinConfig) -> Result<Self> {
        Ok(TwoBranch {
            regular: SwinBlock::new(&mut init.scope("a"), dim, cfg, false)?,
            shifted: SwinBlock::new(&mut init.scope("b"), dim, cfg, true)?,
        })
    }

    /// `[B,C,H,W]` in and out.
    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let z = f.permute(&[0, 2, 3, 1])?;
        let y = self
            .regular
            .forward(p, z)?
            .add(self.shifted.forward(p, z)?)?;
        y.permute(&[0, 3, 1, 2])
    }
}

/// `[B,C,H,W]` → `[B,2C,H/2,W/2]`: two branches at C, 2×2 average pool,
/// then a 1×1 conv doubling the channels.
#[derive(Clone, Debug)]
pub struct DownSwinBlock {
    pub branches: TwoBranch,
    pub expand: Conv,
    pub channels: usize,
}

impl DownSwinBlock {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        channels: usize,
        cfg: &SwinConfig,
    ) -> Result<Self> {
        Ok(DownSwinBlock {
            branches: TwoBranch::new(init, channels, cfg)?,
            expand: Conv::new(&mut init.scope("expand"), channels, 2 * channels, 1, 1)?,
            channels,
        })
    }

    pub fn numel(channels: usize, cfg: &SwinConfig) -> usize {
        2 * SwinBlock::numel(channels, cfg) + Conv::numel(channels, 2 * channels, 1)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.branches.forward(p, f)?.avg_pool2()?;
        self.expand.forward(p, y)
    }
}

/// `[B,2C,H,W]` → `[B,C,2H,2W]`: two branches at 2C, a 1×1 conv halving the
/// channels, nearest upsampling and a 3×3 conv.
#[derive(Clone, Debug)]
pub struct UpSwinBlock {
    pub branches: TwoBranch,
    pub reduce: Conv,
    pub smooth: Conv,
    pub channels: usize,
}

impl UpSwinBlock {
    /// `channels` is the output width C; the input carries 2C.
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        channels: usize,
        cfg: &SwinConfig,
    ) -> Result<Self> {
        Ok(UpSwinBlock {
            branches: TwoBranch::new(init, 2 * channels, cfg)?,
            reduce: Conv::new(&mut init.scope("reduce"), 2 * channels, channels, 1, 1)?,
            smooth: Conv::new(&mut init.scope("smooth"), channels, channels, 3, 1)?,
            channels,
        })
    }

    pub fn numel(channels: usize, cfg: &SwinConfig) -> usize {
        2 * SwinBlock::numel(2 * channels, cfg)
            + Conv::numel(2 * channels, channels, 1)
            + Conv::numel(channels, channels, 3)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.branches.forward(p, f)?;
        let y = self.reduce.forward(p, y)?.upsample_nearest2()?;
        self.smooth.forward(p, y)
    }
}
