//! The full denoiser: encoder, decoder, style extractor, style generator and
//! style conversion.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, Entry, CHECKPOINT_VERSION};
pub(crate) use config::parse_num;
pub use config::ModelConfig;

use crate::error::{Error, Result};
use crate::ndgrad::{Rng, Scalar, Tape, Tensor, Var};
use crate::nn::{Bound, Conv, Init, Linear, ParamStore, RELU_GAIN};
use crate::swin::{DownSwinBlock, UpSwinBlock};

/// Channels of the extractor's stride-2 conv stack before the pooled width.
pub const EXTRACTOR_CHANNELS: [usize; 3] = [32, 64, 128];
/// Affine layers in the style generator.
pub const GENERATOR_LAYERS: usize = 6;
/// Name prefix of every style-generator parameter.
pub const GENERATOR_PREFIX: &str = "gen.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleKind {
    Noise,
    NoiseFree,
    Sampled,
    Mixed,
}

/// One style code; `kind` is a label only.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector {
    pub values: Vec<f64>,
    pub kind: StyleKind,
}

impl StyleVector {
    pub fn new(values: Vec<f64>, kind: StyleKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite style value".into()));
        }
        Ok(StyleVector { values, kind })
    }

    /// Split a `[B, style_dim]` batch into per-sample vectors.
    pub fn from_batch<T: Scalar>(batch: &Tensor<T>, kind: StyleKind) -> Result<Vec<Self>> {
        let d = *batch.shape().last().unwrap();
        batch
            .data()
            .chunks(d)
            .map(|c| Self::new(c.iter().map(|v| v.f64()).collect(), kind))
            .collect()
    }

    /// Stack vectors into a `[B, style_dim]` tensor.
    pub fn to_batch<T: Scalar>(styles: &[StyleVector]) -> Result<Tensor<T>> {
        let d = styles.first().map_or(0, |s| s.values.len());
        if d == 0 || styles.iter().any(|s| s.values.len() != d) {
            return Err(Error::dim("style batch needs equal, non-empty vectors"));
        }
        let data = styles
            .iter()
            .flat_map(|s| s.values.iter().map(|&v| T::c(v)))
            .collect();
        Tensor::new(&[styles.len(), d], data)
    }
}

/// How the fusion mask of the style-conversion stage is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Learned,
    /// Mask ≡ 1: the stage returns its input features.
    Ones,
    /// Mask ≡ 0: the stage returns the AdaIN branch.
    Zeros,
}

/// `s_s·(e−μ)/σ + s_b` per sample and channel, with `σ = √(var + eps)`.
///
/// `e` is `[B,C,H,W]`; `s_s` and `s_b` are `[B,C]`.
pub fn adain<'t, T: Scalar>(
    e: Var<'t, T>,
    s_s: Var<'t, T>,
    s_b: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let s = e.shape();
    if s.len() != 4 || s_s.shape() != [s[0], s[1]] || s_b.shape() != [s[0], s[1]] {
        return Err(Error::dim(format!(
            "adain on {s:?} with styles {:?}/{:?}",
            s_s.shape(),
            s_b.shape()
        )));
    }
    let (b, c) = (s[0], s[1]);
    let norm = e.reshape(&[b, c, s[2] * s[3]])?.layer_norm(None, eps)?;
    norm.mul(s_s.reshape(&[b, c, 1])?)?
        .add(s_b.reshape(&[b, c, 1])?)?
        .reshape(&s)
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub head: Conv,
    pub downs: Vec<DownSwinBlock>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub ups: Vec<UpSwinBlock>,
    pub tail: Conv,
}

#[derive(Clone, Debug)]
pub struct Extractor {
    pub convs: Vec<Conv>,
    pub proj: Linear,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct AdaInBlock {
    pub affine: Linear,
    pub conv: Conv,
}

#[derive(Clone, Debug)]
pub struct StyleConvert {
    pub reduce: Conv,
    pub blocks: Vec<AdaInBlock>,
    pub restore: Conv,
    pub mask: Conv,
    pub channels: usize,
    pub eps: f64,
}

/// Intermediate results of the style-conversion stage.
pub struct ScParts<'t, T: Scalar> {
    pub adain: Var<'t, T>,
    pub mask: Var<'t, T>,
    pub out: Var<'t, T>,
}

/// Network structure; parameter values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct SdidNet {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub extractor: Extractor,
    pub generator: Generator,
    pub sc: StyleConvert,
}

impl SdidNet {
    /// Build the structure and draw initial parameters from `seed`.
    pub fn new<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(seed, 0x1417);
        let mut init = Init::new(&mut store, &mut rng);
        let sw = cfg.swin();
        let c = cfg.base_channels;

        let mut enc = init.scope("enc");
        let head = Conv::new(&mut enc.scope("head"), cfg.in_channels, c, 3, 1)?;
        let downs = (0..cfg.num_scales)
            .map(|i| DownSwinBlock::new(&mut enc.scope(&format!("down{i}")), c << i, &sw))
            .collect::<Result<_>>()?;
        let encoder = Encoder { head, downs };

        let mut dec = init.scope("dec");
        let ups = (0..cfg.num_scales)
            .rev()
            .enumerate()
            .map(|(j, i)| UpSwinBlock::new(&mut dec.scope(&format!("up{j}")), c << i, &sw))
            .collect::<Result<_>>()?;
        let tail = Conv::new(&mut dec.scope("tail"), c, cfg.in_channels, 3, 1)?;
        let decoder = Decoder { ups, tail };

        let mut ext = init.scope("ext");
        let mut widths = vec![cfg.in_channels];
        widths.extend(EXTRACTOR_CHANNELS);
        widths.push(cfg.gap_dim);
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut scope = ext.scope(&format!("conv{i}"));
                Conv::with_gain(&mut scope, w[0], w[1], 3, 2, RELU_GAIN)
            })
            .collect::<Result<_>>()?;
        let proj = Linear::new(&mut ext.scope("proj"), cfg.gap_dim, cfg.style_dim, true)?;
        let extractor = Extractor { convs, proj };

        let mut gen = init.scope(GENERATOR_PREFIX.trim_end_matches('.'));
        let layers = (0..GENERATOR_LAYERS)
            .map(|i| {
                let d_in = if i == 0 {
                    cfg.gen_input_dim
                } else {
                    cfg.style_dim
                };
                Linear::new(&mut gen.scope(&format!("fc{i}")), d_in, cfg.style_dim, true)
            })
            .collect::<Result<_>>()?;
        let generator = Generator { layers };

        let mut sc = init.scope("sc");
        let (ce, cr) = (cfg.bottleneck_channels(), cfg.sc_channels());
        let reduce = Conv::new(&mut sc.scope("reduce"), ce, cr, 1, 1)?;
        let mut blocks = Vec::with_capacity(cfg.sc_blocks);
        for k in 0..cfg.sc_blocks {
            let mut bi = sc.scope(&format!("block{k}"));
            let affine = Linear::new(&mut bi.scope("affine"), cfg.style_dim, 2 * cr, true)?;
            // scale half starts at 1 so a fresh block passes normalized features through
            let b = affine.b.expect("affine bias");
            bi.store.get_mut(b).data_mut()[..cr].fill(T::one());
            let conv = Conv::new(&mut bi.scope("conv"), cr, cr, 3, 1)?;
            blocks.push(AdaInBlock { affine, conv });
        }
        let restore = Conv::new(&mut sc.scope("restore"), cr, ce, 1, 1)?;
        let mask = Conv::new(&mut sc.scope("mask"), ce, ce, 1, 1)?;
        let sc = StyleConvert {
            reduce,
            blocks,
            restore,
            mask,
            channels: cr,
            eps: cfg.eps,
        };

        let net = SdidNet {
            cfg: cfg.clone(),
            encoder,
            decoder,
            extractor,
            generator,
            sc,
        };
        Ok((net, store))
    }

    fn check_image(&self, x: &Var<'_, impl Scalar>) -> Result<()> {
        let s = x.shape();
        let m = self.cfg.size_multiple();
        if s.len() != 4 || s[1] != self.cfg.in_channels {
            return Err(Error::dim(format!(
                "expected [B,{},H,W], got {s:?}",
                self.cfg.in_channels
            )));
        }
        if !s[2].is_multiple_of(m) || !s[3].is_multiple_of(m) {
            return Err(Error::dim(format!(
                "image {}x{} not divisible by {m}",
                s[2], s[3]
            )));
        }
        Ok(())
    }

    /// `[B,in,H,W]` → `[B,C·2^s,H/2^s,W/2^s]`.
    pub fn encode<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_image(&x)?;
        let mut f = self.encoder.head.forward(p, x)?;
        for d in &self.encoder.downs {
            f = d.forward(p, f)?;
        }
        Ok(f)
    }

    pub fn decode<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        if s.len() != 4 || s[1] != self.cfg.bottleneck_channels() {
            return Err(Error::dim(format!(
                "decoder expects {} channels, got {s:?}",
                self.cfg.bottleneck_channels()
            )));
        }
        let mut f = f;
        for u in &self.decoder.ups {
            f = u.forward(p, f)?;
        }
        self.decoder.tail.forward(p, f)
    }

    /// `[B,in,H,W]` → `[B,style_dim]`.
    pub fn extract<'t, T: Scalar>(&self, p: &Bound<'t, T>, img: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = img.shape();
        if s.len() != 4 || s[1] != self.cfg.in_channels {
            return Err(Error::dim(format!(
                "extractor expects [B,{},H,W], got {s:?}",
                self.cfg.in_channels
            )));
        }
        let mut f = img;
        for c in &self.extractor.convs {
            f = c.forward(p, f)?.relu();
        }
        let fs = f.shape();
        let pooled = f.reshape(&[fs[0], fs[1], fs[2] * fs[3]])?.mean_lastdim();
        self.extractor.proj.forward(p, pooled)
    }

    /// `[B,gen_input_dim]` → `[B,style_dim]`.
    pub fn generate<'t, T: Scalar>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = z.shape();
        if s.len() != 2 || s[1] != self.cfg.gen_input_dim {
            return Err(Error::dim(format!(
                "generator expects [B,{}], got {s:?}",
                self.cfg.gen_input_dim
            )));
        }
        let n = self.generator.layers.len();
        let mut h = z;
        for (i, l) in self.generator.layers.iter().enumerate() {
            h = l.forward(p, h)?;
            if i + 1 < n {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Standard-normal generator input for `batch` samples.
    pub fn sample_latent<T: Scalar>(&self, rng: &mut Rng, batch: usize) -> Tensor<T> {
        crate::ndgrad::rand_normal(rng, &[batch, self.cfg.gen_input_dim])
    }

    pub fn convert_parts<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        fe: Var<'t, T>,
        style: Var<'t, T>,
        mode: MaskMode,
    ) -> Result<ScParts<'t, T>> {
        let s = fe.shape();
        let ce = self.cfg.bottleneck_channels();
        if s.len() != 4 || s[1] != ce {
            return Err(Error::dim(format!(
                "style conversion expects {ce} channels, got {s:?}"
            )));
        }
        if style.shape() != [s[0], self.cfg.style_dim] {
            return Err(Error::dim(format!(
                "style batch {:?} for features {s:?}",
                style.shape()
            )));
        }
        let sc = &self.sc;
        let cr = sc.channels;
        let mut h = sc.reduce.forward(p, fe)?;
        for blk in &sc.blocks {
            let ab = blk.affine.forward(p, style)?;
            let s_s = ab.narrow(1, 0, cr)?;
            let s_b = ab.narrow(1, cr, cr)?;
            h = adain(h, s_s, s_b, sc.eps)?;
            h = blk.conv.forward(p, h)?.gelu();
        }
        let fa = sc.restore.forward(p, h)?;
        let tape = fe.tape();
        let mask = match mode {
            MaskMode::Learned => sc.mask.forward(p, fa)?.sigmoid(),
            MaskMode::Ones => tape.constant(Tensor::full(&s, T::one())),
            MaskMode::Zeros => tape.constant(Tensor::zeros(&s)),
        };
        let inv = mask.scale(-1.0).add_scalar(1.0);
        let out = mask.mul(fe)?.add(inv.mul(fa)?)?;
        Ok(ScParts {
            adain: fa,
            mask,
            out,
        })
    }

    /// `Mask⊙F_e + (1−Mask)⊙F_adain` for a `[B,style_dim]` style batch.
    pub fn convert<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        fe: Var<'t, T>,
        style: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.convert_parts(p, fe, style, MaskMode::Learned)?.out)
    }

    pub fn denoise<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        style: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let fe = self.encode(p, x)?;
        let fs = self.convert(p, fe, style)?;
        self.decode(p, fs)
    }

    /// Denoise a batch without recording gradients. `styles` defaults to
    /// generator samples drawn from `rng`.
    pub fn denoise_tensor<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        styles: Option<&Tensor<T>>,
        rng: &mut Rng,
    ) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let xv = tape.constant(x.clone());
        let s = match styles {
            Some(s) => tape.constant(s.clone()),
            None => self.generate(&p, tape.constant(self.sample_latent(rng, x.shape()[0])))?,
        };
        Ok(self.denoise(&p, xv, s)?.value())
    }
}

/// Trainable scalars of the network described by `cfg`, by per-layer formula.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let sw = cfg.swin();
    let c = cfg.base_channels;
    let (ce, cr, sd) = (cfg.bottleneck_channels(), cfg.sc_channels(), cfg.style_dim);
    let encoder = Conv::numel(cfg.in_channels, c, 3)
        + (0..cfg.num_scales)
            .map(|i| DownSwinBlock::numel(c << i, &sw))
            .sum::<usize>();
    let decoder = (0..cfg.num_scales)
        .map(|i| UpSwinBlock::numel(c << i, &sw))
        .sum::<usize>()
        + Conv::numel(c, cfg.in_channels, 3);
    let mut widths = vec![cfg.in_channels];
    widths.extend(EXTRACTOR_CHANNELS);
    widths.push(cfg.gap_dim);
    let extractor = widths
        .windows(2)
        .map(|w| Conv::numel(w[0], w[1], 3))
        .sum::<usize>()
        + Linear::numel(cfg.gap_dim, sd, true);
    let generator = Linear::numel(cfg.gen_input_dim, sd, true)
        + (GENERATOR_LAYERS - 1) * Linear::numel(sd, sd, true);
    let sc = Conv::numel(ce, cr, 1)
        + cfg.sc_blocks * (Linear::numel(sd, 2 * cr, true) + Conv::numel(cr, cr, 3))
        + Conv::numel(cr, ce, 1)
        + Conv::numel(ce, ce, 1);
    encoder + decoder + extractor + generator + sc
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: SdidNet,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let (net, params) = SdidNet::new(cfg, seed)?;
        Ok(Model { net, params })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Copy every parameter tensor of matching name from `ckpt`; all must be present.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let t: Tensor<T> = ckpt.tensor(&name)?;
            if t.shape() != self.params.get(id).shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = t;
        }
        Ok(())
    }

    /// Parameters as checkpoint entries in store order.
    pub fn param_entries(&self) -> Vec<(String, Entry)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_string(), Entry::from_tensor(t)))
            .collect()
    }
}
