//! Gradient and property suites behind `verify`.

use std::time::{Duration, Instant};

use crate::analysis::{psnr, ssim};
use crate::error::{Error, Result};
use crate::ndgrad::{
    grad_check_precise, rand_normal, rand_uniform, Coords, GradCheckOptions, GradReport, Objective,
    Rng, Scalar, Tape, Tensor, Var,
};
use crate::nn::{Bound, Init, ParamStore};
use crate::objective::{full_loss, reconstruction_loss, Bind, LossWeights, StyleModel};
use crate::sdidnet::{adain, MaskMode, Model, ModelConfig, SdidNet};
use crate::swin::{
    window_partition, window_reverse, DownSwinBlock, SwinBlock, SwinConfig, UpSwinBlock,
};

/// Tolerance of every gradient check.
pub const GRAD_TOL: f64 = 1e-5;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    /// Largest relative gradient error, for gradient checks.
    pub max_rel_err: Option<f64>,
    pub detail: String,
    pub elapsed: Duration,
}

impl CheckLine {
    pub fn render(&self) -> String {
        let err = self
            .max_rel_err
            .map(|e| format!(" max_rel_err={e:.3e}"))
            .unwrap_or_default();
        format!(
            "{} {:<28}{err} {} ({:.2}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Micro network used for the end-to-end check.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        sc_blocks: 2,
        style_dim: 16,
        gen_input_dim: 8,
        gap_dim: 32,
        ..ModelConfig::desk()
    }
}

/// `full_loss` of a fixed micro batch as a function of all network parameters.
pub struct MicroLoss {
    pub net: SdidNet,
    pub x: Tensor<f64>,
    pub y: Tensor<f64>,
    pub z: Tensor<f64>,
}

impl MicroLoss {
    /// N=2 batch of 16×16 images.
    pub fn new(seed: u64) -> Result<(Self, Vec<Tensor<f64>>)> {
        let model = Model::<f64>::new(&micro_config(), seed)?;
        let mut rng = Rng::derive(seed, 0x3C);
        let x = rand_uniform(&mut rng, &[2, 1, 16, 16], 0.0, 1.0);
        let y = rand_uniform(&mut rng, &[2, 1, 16, 16], 0.0, 1.0);
        let z = rand_normal(&mut rng, &[2, micro_config().gen_input_dim]);
        let params = model.params.tensors().to_vec();
        Ok((
            MicroLoss {
                net: model.net,
                x,
                y,
                z,
            },
            params,
        ))
    }
}

impl Objective for MicroLoss {
    fn eval<'t, T: Scalar>(&self, tape: &'t Tape<T>, params: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let p = Bound::from_vars(params.to_vec());
        let m = Bind {
            net: &self.net,
            p: &p,
        };
        let c = |t: &Tensor<f64>| tape.constant(t.cast());
        Ok(full_loss(
            &m,
            c(&self.x),
            c(&self.y),
            c(&self.z),
            &LossWeights::default(),
        )?
        .full)
    }
}

/// `Σ wᵢ·yᵢ` with fixed weights in [0.5, 1.5), so every output element matters.
fn probe<'t, T: Scalar>(y: Var<'t, T>, seed: u64) -> Result<Var<'t, T>> {
    let mut rng = Rng::derive(seed, 0x9B);
    let w = y
        .tape()
        .constant(rand_uniform(&mut rng, &y.shape(), 0.5, 1.5));
    Ok(y.mul(w)?.sum())
}

#[allow(clippy::large_enum_variant)]
enum Kind {
    Matmul,
    Bmm(bool, bool),
    Linear,
    Conv { stride: usize, pad: usize },
    Add,
    Sub,
    Mul,
    Relu,
    Gelu,
    Sigmoid,
    Abs,
    Affine,
    Softmax,
    LayerNorm,
    AvgPool,
    Upsample,
    PermuteRoll,
    Narrow,
    MeanLastdim,
    Mean,
    L1,
    Windows(usize),
    Block(SwinBlock),
    DownUp(DownSwinBlock, UpSwinBlock),
    AdaIn,
}

/// One primitive or block, with its inputs as the checked parameters.
struct Case {
    name: &'static str,
    kind: Kind,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
}

impl Objective for Case {
    fn eval<'t, T: Scalar>(&self, _tape: &'t Tape<T>, v: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let y = match &self.kind {
            Kind::Matmul => v[0].matmul(v[1])?,
            Kind::Bmm(ta, tb) => v[0].bmm(v[1], *ta, *tb)?,
            Kind::Linear => v[0].linear(v[1], Some(v[2]))?,
            Kind::Conv { stride, pad } => v[0].conv2d(v[1], Some(v[2]), *stride, *pad)?,
            Kind::Add => v[0].add(v[1])?,
            Kind::Sub => v[0].sub(v[1])?,
            Kind::Mul => v[0].mul(v[1])?,
            Kind::Relu => v[0].relu(),
            Kind::Gelu => v[0].gelu(),
            Kind::Sigmoid => v[0].sigmoid(),
            Kind::Abs => v[0].abs(),
            Kind::Affine => v[0].scale(-1.7).add_scalar(0.3),
            Kind::Softmax => v[0].softmax_lastdim(),
            Kind::LayerNorm => v[0].layer_norm(Some((v[1], v[2])), 1e-5)?,
            Kind::AvgPool => v[0].avg_pool2()?,
            Kind::Upsample => v[0].upsample_nearest2()?,
            Kind::PermuteRoll => v[0].permute(&[0, 2, 3, 1])?.roll(&[0, 1, -1, 0])?,
            Kind::Narrow => v[0].narrow(1, 1, 2)?,
            Kind::MeanLastdim => v[0].mean_lastdim(),
            Kind::Mean => return Ok(v[0].mul(v[0])?.mean()),
            Kind::L1 => return v[0].l1(v[1]),
            Kind::Windows(m) => {
                let s = v[0].shape();
                let w = window_partition(v[0], *m)?;
                let w = w.mul(w)?;
                window_reverse(w, *m, s[1], s[2])?
            }
            Kind::Block(b) => {
                let n = v.len() - 1;
                let p = Bound::from_vars(v[..n].to_vec());
                b.forward(&p, v[n])?
            }
            Kind::DownUp(d, u) => {
                let n = v.len() - 1;
                let p = Bound::from_vars(v[..n].to_vec());
                u.forward(&p, d.forward(&p, v[n])?)?
            }
            Kind::AdaIn => adain(v[0], v[1], v[2], 1e-5)?,
        };
        probe(y, self.seed)
    }
}

/// A sub-network of the micro model; only parameters under `prefixes` and the
/// extra inputs are checked, the rest stay fixed.
struct Subnet {
    name: &'static str,
    model: Model<f64>,
    selected: Vec<usize>,
    inputs: Vec<Tensor<f64>>,
    part: Part,
}

#[derive(Clone, Copy)]
enum Part {
    EncodeDecode,
    Extract,
    Generate,
    Convert,
}

impl Subnet {
    fn new(name: &'static str, prefixes: &[&str], part: Part, seed: u64) -> Result<Self> {
        let model = Model::<f64>::new(&micro_config(), seed)?;
        let selected = model
            .params
            .ids()
            .filter(|id| {
                prefixes
                    .iter()
                    .any(|p| model.params.name(*id).starts_with(p))
            })
            .map(|id| id.0)
            .collect();
        let cfg = micro_config();
        let mut rng = Rng::derive(seed, 0x5B);
        let inputs = match part {
            Part::Convert => vec![
                rand_normal(&mut rng, &[1, cfg.bottleneck_channels(), 4, 4]),
                rand_normal(&mut rng, &[1, cfg.style_dim]),
            ],
            Part::Generate => vec![rand_normal(&mut rng, &[2, cfg.gen_input_dim])],
            _ => vec![rand_uniform(&mut rng, &[1, 1, 16, 16], 0.0, 1.0)],
        };
        Ok(Subnet {
            name,
            model,
            selected,
            inputs,
            part,
        })
    }

    fn params(&self) -> Vec<Tensor<f64>> {
        let all = self.model.params.tensors();
        let mut out: Vec<_> = self.selected.iter().map(|&i| all[i].clone()).collect();
        out.extend(self.inputs.iter().cloned());
        out
    }
}

impl Objective for Subnet {
    fn eval<'t, T: Scalar>(&self, tape: &'t Tape<T>, v: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let mut all: Vec<Var<'t, T>> = self
            .model
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.cast()))
            .collect();
        for (k, &i) in self.selected.iter().enumerate() {
            all[i] = v[k];
        }
        let extra = &v[self.selected.len()..];
        let p = Bound::from_vars(all);
        let net = &self.model.net;
        let y = match self.part {
            Part::EncodeDecode => net.decode(&p, net.encode(&p, extra[0])?)?,
            Part::Extract => net.extract(&p, extra[0])?,
            Part::Generate => net.generate(&p, extra[0])?,
            Part::Convert => net.convert(&p, extra[0], extra[1])?,
        };
        probe(y, 77)
    }
}

fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    rand_uniform(&mut Rng::new(seed), shape, lo, hi)
}

/// Values bounded away from zero, so kinks of relu/abs are never straddled.
fn signed(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.1, 1.0);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn swin_store(seed: u64) -> (ParamStore<f64>, Rng) {
    (ParamStore::new(), Rng::new(seed))
}

fn primitive_cases() -> Result<Vec<Case>> {
    let sw = SwinConfig {
        window: 2,
        heads: 2,
        mlp_ratio: 2,
        eps: 1e-5,
    };
    let case = |name, kind, inputs| Case {
        name,
        kind,
        inputs,
        seed: 11,
    };
    let mut cases = vec![
        case(
            "matmul",
            Kind::Matmul,
            vec![
                uniform(1, &[3, 4], -1.0, 1.0),
                uniform(2, &[4, 5], -1.0, 1.0),
            ],
        ),
        case(
            "linear",
            Kind::Linear,
            vec![
                uniform(4, &[2, 3, 4], -1.0, 1.0),
                uniform(5, &[4, 3], -1.0, 1.0),
                uniform(6, &[3], -1.0, 1.0),
            ],
        ),
        case(
            "conv2d_3x3",
            Kind::Conv { stride: 1, pad: 1 },
            vec![
                uniform(7, &[2, 2, 5, 6], -1.0, 1.0),
                uniform(8, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(9, &[3], -1.0, 1.0),
            ],
        ),
        case(
            "conv2d_1x1",
            Kind::Conv { stride: 1, pad: 0 },
            vec![
                uniform(10, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(11, &[2, 3, 1, 1], -1.0, 1.0),
                uniform(12, &[2], -1.0, 1.0),
            ],
        ),
        case(
            "conv2d_stride2",
            Kind::Conv { stride: 2, pad: 1 },
            vec![
                uniform(13, &[1, 2, 6, 5], -1.0, 1.0),
                uniform(14, &[2, 2, 3, 3], -1.0, 1.0),
                uniform(15, &[2], -1.0, 1.0),
            ],
        ),
        case(
            "add_broadcast",
            Kind::Add,
            vec![
                uniform(16, &[2, 3, 4], -1.0, 1.0),
                uniform(17, &[1, 3, 1], -1.0, 1.0),
            ],
        ),
        case(
            "sub_broadcast",
            Kind::Sub,
            vec![
                uniform(18, &[2, 3, 4], -1.0, 1.0),
                uniform(19, &[1, 1, 4], -1.0, 1.0),
            ],
        ),
        case(
            "mul_broadcast",
            Kind::Mul,
            vec![
                uniform(20, &[2, 3, 4], -1.0, 1.0),
                uniform(21, &[2, 1, 4], -1.0, 1.0),
            ],
        ),
        case("relu", Kind::Relu, vec![signed(22, &[3, 5])]),
        case("gelu", Kind::Gelu, vec![uniform(23, &[3, 5], -3.0, 3.0)]),
        case(
            "sigmoid",
            Kind::Sigmoid,
            vec![uniform(24, &[3, 5], -4.0, 4.0)],
        ),
        case("abs", Kind::Abs, vec![signed(25, &[3, 5])]),
        case(
            "scale_shift",
            Kind::Affine,
            vec![uniform(26, &[3, 5], -1.0, 1.0)],
        ),
        case(
            "softmax",
            Kind::Softmax,
            vec![uniform(27, &[3, 6], -2.0, 2.0)],
        ),
        case(
            "layer_norm",
            Kind::LayerNorm,
            vec![
                uniform(28, &[3, 6], -2.0, 2.0),
                uniform(29, &[6], 0.5, 1.5),
                uniform(30, &[6], -0.5, 0.5),
            ],
        ),
        case(
            "avg_pool2",
            Kind::AvgPool,
            vec![uniform(31, &[1, 2, 4, 6], -1.0, 1.0)],
        ),
        case(
            "upsample_nearest2",
            Kind::Upsample,
            vec![uniform(32, &[1, 2, 3, 2], -1.0, 1.0)],
        ),
        case(
            "permute_roll",
            Kind::PermuteRoll,
            vec![uniform(33, &[2, 3, 4, 3], -1.0, 1.0)],
        ),
        case(
            "narrow",
            Kind::Narrow,
            vec![uniform(34, &[2, 4, 3], -1.0, 1.0)],
        ),
        case(
            "mean_lastdim",
            Kind::MeanLastdim,
            vec![uniform(35, &[3, 7], -1.0, 1.0)],
        ),
        case("mean", Kind::Mean, vec![uniform(36, &[4, 5], -1.0, 1.0)]),
        case(
            "l1",
            Kind::L1,
            vec![signed(37, &[4, 5]), Tensor::zeros(&[4, 5])],
        ),
        case(
            "window_partition",
            Kind::Windows(2),
            vec![uniform(38, &[1, 4, 6, 3], -1.0, 1.0)],
        ),
        case(
            "adain",
            Kind::AdaIn,
            vec![
                uniform(39, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(40, &[2, 3], 0.5, 1.5),
                uniform(41, &[2, 3], -0.5, 0.5),
            ],
        ),
    ];
    for (ta, tb, name) in [
        (false, false, "bmm"),
        (true, false, "bmm_ta"),
        (false, true, "bmm_tb"),
        (true, true, "bmm_ta_tb"),
    ] {
        let sa = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let sb = if tb { [2, 5, 4] } else { [2, 4, 5] };
        cases.push(case(
            name,
            Kind::Bmm(ta, tb),
            vec![uniform(50, &sa, -1.0, 1.0), uniform(51, &sb, -1.0, 1.0)],
        ));
    }
    for (shifted, name) in [(false, "swin_block"), (true, "swin_block_shifted")] {
        let (mut store, mut rng) = swin_store(60);
        let b = SwinBlock::new(&mut Init::new(&mut store, &mut rng), 4, &sw, shifted)?;
        // random values everywhere so no term is trivially zero
        let mut inputs: Vec<Tensor<f64>> = store
            .tensors()
            .iter()
            .enumerate()
            .map(|(k, t)| uniform(600 + k as u64, t.shape(), -0.6, 0.6))
            .collect();
        inputs.push(uniform(61, &[1, 4, 4, 4], -1.0, 1.0));
        cases.push(case(name, Kind::Block(b), inputs));
    }
    let (mut store, mut rng) = swin_store(62);
    let mut init = Init::new(&mut store, &mut rng);
    let d = DownSwinBlock::new(&mut init.scope("down"), 4, &sw)?;
    let u = UpSwinBlock::new(&mut init.scope("up"), 4, &sw)?;
    let mut inputs = store.tensors().to_vec();
    inputs.push(uniform(63, &[1, 4, 4, 4], 0.0, 1.0));
    cases.push(case("down_up_swin", Kind::DownUp(d, u), inputs));
    Ok(cases)
}

fn timed(name: &str, f: impl FnOnce() -> Result<GradReport>) -> CheckLine {
    let t = Instant::now();
    let r = f();
    let elapsed = t.elapsed();
    match r {
        Ok(r) => CheckLine {
            name: name.to_string(),
            pass: r.pass,
            max_rel_err: Some(r.max_rel_err),
            detail: format!(
                "coords={} refined={} kinks={}",
                r.coords_checked, r.refined, r.kinks
            ),
            elapsed,
        },
        Err(e) => CheckLine {
            name: name.to_string(),
            pass: false,
            max_rel_err: None,
            detail: format!("error: {e}"),
            elapsed,
        },
    }
}

/// Every differentiable primitive, the attention blocks, each sub-network of
/// a micro model, and the micro end-to-end `full_loss` (64-bit, N=2).
/// `corrupt_backward` scales analytic gradients, as a negative control.
pub fn grad_suite(
    corrupt_backward: Option<f64>,
    on_line: &mut dyn FnMut(&CheckLine),
) -> Result<Vec<CheckLine>> {
    let mut opts = GradCheckOptions::with_tol(GRAD_TOL);
    opts.corrupt_backward = corrupt_backward;
    let mut lines = Vec::new();
    let mut push = |l: CheckLine| {
        on_line(&l);
        lines.push(l);
    };
    for c in primitive_cases()? {
        push(timed(c.name, || grad_check_precise(&c, &c.inputs, &opts)));
    }
    let subnets = [
        ("encoder_decoder", &["enc.", "dec."][..], Part::EncodeDecode),
        ("extractor", &["ext."][..], Part::Extract),
        ("generator", &["gen."][..], Part::Generate),
        ("style_convert", &["sc."][..], Part::Convert),
    ];
    let mut sub_opts = opts.clone();
    sub_opts.coords = Coords::Pooled(32);
    for (name, prefixes, part) in subnets {
        let s = Subnet::new(name, prefixes, part, 41)?;
        push(timed(s.name, || {
            grad_check_precise(&s, &s.params(), &sub_opts)
        }));
    }
    let mut micro_opts = opts.clone();
    micro_opts.coords = Coords::Pooled(64);
    push(timed("micro_full_loss", || {
        let (obj, params) = MicroLoss::new(5)?;
        grad_check_precise(&obj, &params, &micro_opts)
    }));
    Ok(lines)
}

fn prop(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckLine {
    let t = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckLine {
        name: name.to_string(),
        pass,
        max_rel_err: None,
        detail,
        elapsed: t.elapsed(),
    }
}

/// Mock model for the closed-form loss case: identity encoder, style
/// conversion and a decoder that adds `offset`.
struct Offset(f64);

impl<'t, T: Scalar> StyleModel<'t, T> for Offset {
    fn encode(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x)
    }
    fn decode(&self, f: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(f.add_scalar(self.0))
    }
    fn convert(&self, f: Var<'t, T>, _style: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(f)
    }
    fn extract(&self, img: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(img
            .reshape(&[img.shape()[0], img.len() / img.shape()[0]])?
            .mean_lastdim())
    }
    fn generate(&self, z: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(z.mean_lastdim())
    }
}

/// Algebraic identities: the fusion-mask boundaries, AdaIN renormalization,
/// window partition roundtrip, metric anchors and the closed-form loss.
pub fn props_suite(on_line: &mut dyn FnMut(&CheckLine)) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let mut push = |l: CheckLine| {
        on_line(&l);
        lines.push(l);
    };
    let model = Model::<f64>::new(&micro_config(), 13)?;
    let cfg = micro_config();
    let fe_t = rand_normal::<f64>(&mut Rng::new(14), &[2, cfg.bottleneck_channels(), 4, 4]);
    let st_t = rand_normal::<f64>(&mut Rng::new(15), &[2, cfg.style_dim]);
    for (mode, name) in [
        (MaskMode::Ones, "mask_ones_returns_input"),
        (MaskMode::Zeros, "mask_zeros_returns_adain"),
    ] {
        push(prop(name, || {
            let tape = Tape::new();
            let p = model.params.bind_frozen(&tape);
            let parts = model.net.convert_parts(
                &p,
                tape.constant(fe_t.clone()),
                tape.constant(st_t.clone()),
                mode,
            )?;
            let want = match mode {
                MaskMode::Ones => fe_t.clone(),
                _ => parts.adain.value(),
            };
            let same = parts
                .out
                .value()
                .data()
                .iter()
                .zip(want.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            Ok((same, "bit-exact".into()))
        }));
    }
    push(prop("adain_inverse_normalization", || {
        let e = uniform(16, &[2, 3, 5, 5], -2.0, 3.0);
        let (b, c, hw) = (2, 3, 25);
        let mut mu = vec![0.0; b * c];
        let mut sd = vec![0.0; b * c];
        let eps = 1e-5;
        for k in 0..b * c {
            let s = &e.data()[k * hw..(k + 1) * hw];
            let m = s.iter().sum::<f64>() / hw as f64;
            let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / hw as f64;
            mu[k] = m;
            sd[k] = (v + eps).sqrt();
        }
        let tape = Tape::new();
        let out = adain(
            tape.constant(e.clone()),
            tape.constant(Tensor::new(&[b, c], sd)?),
            tape.constant(Tensor::new(&[b, c], mu)?),
            eps,
        )?
        .value();
        let err = out
            .data()
            .iter()
            .zip(e.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((err <= 1e-5, format!("max_abs_err={err:.2e}")))
    }));
    push(prop("window_partition_roundtrip", || {
        let mut ok = true;
        for (b, h, w, m, d) in [
            (1, 4, 4, 2, 3),
            (2, 8, 4, 4, 2),
            (1, 6, 9, 3, 1),
            (2, 4, 4, 1, 5),
        ] {
            let x = uniform(17 + h as u64, &[b, h, w, d], -1.0, 1.0);
            let tape = Tape::new();
            let back =
                window_reverse(window_partition(tape.constant(x.clone()), m)?, m, h, w)?.value();
            ok &= back
                .data()
                .iter()
                .zip(x.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
        Ok((ok, "bit-exact over 4 geometries".into()))
    }));
    push(prop("psnr_20db", || {
        let a = Tensor::<f64>::zeros(&[1, 8, 8]);
        let b = Tensor::full(&[1, 8, 8], 0.1);
        let p = psnr(&a, &b, 1.0)?;
        Ok(((p - 20.0).abs() <= 1e-9, format!("psnr={p:.12}")))
    }));
    push(prop("ssim_self_is_one", || {
        let a = uniform(18, &[1, 24, 24], 0.0, 1.0);
        let s = ssim(&a, &a, 1.0)?;
        Ok(((s - 1.0).abs() <= 1e-12, format!("ssim={s}")))
    }));
    push(prop("loss_closed_form", || {
        let tape = Tape::<f64>::new();
        let x = tape.constant(uniform(19, &[2, 1, 4, 4], 0.0, 1.0));
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let m = Offset(0.1);
        let l = reconstruction_loss(&m, x, x, z, &LossWeights::default())?
            .total
            .item();
        let zero = reconstruction_loss(&Offset(0.0), x, x, z, &LossWeights::default())?
            .total
            .item();
        let ok = (l - 0.09).abs() <= 1e-7 && zero == 0.0;
        Ok((ok, format!("offset 0.1 -> {l:.10}, exact -> {zero}")))
    }));
    Ok(lines)
}

/// `Err` naming the failures when any line failed.
pub fn require_all(lines: &[CheckLine]) -> Result<()> {
    let failed: Vec<&str> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| l.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}
