use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::adam::{cosine_lr, Adam};
use super::{full_loss, Bind, LossWeights};
use crate::analysis::psnr;
use crate::error::{Error, Result};
use crate::ndgrad::{Rng, Scalar, Tape, Tensor};
use crate::nn::ParamId;
use crate::sdidnet::{Checkpoint, Entry, Model, GENERATOR_PREFIX};
use crate::synthdata::{add_awgn, random_crop_pair, TrainSample};

pub const METRICS_HEADER: &str = "step,lr_main,lr_gen,loss_full,loss_rec,loss_sty,psnr_val";

/// Optimization schedule and batch assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub crop: usize,
    pub steps: u64,
    pub lr_main: f64,
    pub lr_gen: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// When non-empty, every crop gets fresh noise at a σ (0–255 scale) drawn
    /// from this list; when empty, the stored noisy image is used.
    pub sigmas: Vec<f64>,
    pub weights: LossWeights,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip: f64,
    pub val_interval: u64,
    pub ckpt_interval: u64,
    pub log_interval: u64,
    /// Validation images used for the logged PSNR.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 4,
            crop: 32,
            steps: 2000,
            lr_main: 2e-4,
            lr_gen: 1e-5,
            lr_min: 1e-6,
            seed: 0,
            sigmas: vec![25.0],
            weights: LossWeights::default(),
            clip: 5.0,
            val_interval: 250,
            ckpt_interval: 500,
            log_interval: 10,
            val_samples: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, size_multiple: usize) -> Result<()> {
        if self.batch == 0 || self.crop == 0 {
            return Err(Error::Config("batch and crop must be positive".into()));
        }
        if !self.crop.is_multiple_of(size_multiple) {
            return Err(Error::Config(format!(
                "crop {} is not a multiple of {size_multiple}",
                self.crop
            )));
        }
        let lrs = [self.lr_main, self.lr_gen, self.lr_min, self.clip];
        if lrs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "learning rates and clip must be finite and non-negative".into(),
            ));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        self.weights.validate()
    }

    /// `(main, generator)` learning rates at `step`.
    pub fn lrs(&self, step: u64) -> (f64, f64) {
        (
            cosine_lr(
                step,
                self.steps,
                self.lr_main,
                self.lr_min.min(self.lr_main),
            ),
            cosine_lr(step, self.steps, self.lr_gen, self.lr_min.min(self.lr_gen)),
        )
    }
}

/// Model plus both optimizers; `step` counts completed updates.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub opt_main: Adam<T>,
    pub opt_gen: Adam<T>,
    pub step: u64,
}

/// Fresh optimizers; generator parameters go to their own instance.
pub fn init_state<T: Scalar>(model: Model<T>) -> TrainState<T> {
    let (gen, main): (Vec<ParamId>, Vec<ParamId>) = model
        .params
        .ids()
        .partition(|id| model.params.name(*id).starts_with(GENERATOR_PREFIX));
    TrainState {
        opt_main: Adam::new(&model.params, main),
        opt_gen: Adam::new(&model.params, gen),
        model,
        step: 0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr_main: f64,
    pub lr_gen: f64,
    pub loss_full: f64,
    pub loss_rec: f64,
    pub loss_sty: f64,
    pub terms: [f64; 5],
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Dihedral transform of a `[C,H,W]` image: optional horizontal flip (bit 2)
/// followed by `code & 3` quarter turns counter-clockwise.
pub fn augment<T: Scalar>(img: &Tensor<T>, code: u8) -> Result<Tensor<T>> {
    if code > 7 {
        return Err(Error::Invalid(format!(
            "augmentation code {code} outside 0..8"
        )));
    }
    let mut out = if code & 4 != 0 {
        flip(img)?
    } else {
        img.clone()
    };
    for _ in 0..code & 3 {
        out = rot90(&out)?;
    }
    Ok(out)
}

/// Undo [`augment`] with the same code.
pub fn augment_inverse<T: Scalar>(img: &Tensor<T>, code: u8) -> Result<Tensor<T>> {
    if code > 7 {
        return Err(Error::Invalid(format!(
            "augmentation code {code} outside 0..8"
        )));
    }
    let mut out = img.clone();
    for _ in 0..(4 - (code & 3)) % 4 {
        out = rot90(&out)?;
    }
    if code & 4 != 0 {
        out = flip(&out)?;
    }
    Ok(out)
}

fn chw(img: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::dim(format!("image must be [C,H,W], got {s:?}"))),
    }
}

fn flip<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(img)?;
    let d = img.data();
    let data = (0..c * h * w)
        .map(|i| d[i - i % w + (w - 1 - i % w)])
        .collect();
    Tensor::new(&[c, h, w], data)
}

fn rot90<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(img)?;
    let d = img.data();
    // output[i][j] = input[j][w-1-i], output is w×h
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..w {
            for j in 0..h {
                data.push(d[ch * h * w + j * w + (w - 1 - i)]);
            }
        }
    }
    Tensor::new(&[c, w, h], data)
}

/// Scale gradients so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = T::c(v.f64() * k));
        }
    }
    norm
}

/// `(noisy, clean)` batches for `step`, a pure function of seed and step.
pub fn assemble_batch<T: Scalar>(
    data: &[TrainSample],
    cfg: &TrainConfig,
    step: u64,
) -> Result<(Tensor<T>, Tensor<T>, Rng)> {
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut rng = Rng::derive(cfg.seed, step);
    let (mut xs, mut ys) = (Vec::with_capacity(cfg.batch), Vec::with_capacity(cfg.batch));
    for _ in 0..cfg.batch {
        let s = &data[rng.below(data.len())];
        let (clean, noisy) = random_crop_pair(s, cfg.crop, &mut rng)?;
        let code = rng.below(8) as u8;
        let clean = augment(&clean, code)?;
        let noisy = if cfg.sigmas.is_empty() {
            augment(&noisy, code)?
        } else {
            let sigma = cfg.sigmas[rng.below(cfg.sigmas.len())];
            add_awgn(&clean, sigma, &mut rng)
        };
        xs.push(noisy.cast::<T>());
        ys.push(clean.cast::<T>());
    }
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?, rng))
}

/// One update of both optimizers on a batch drawn for `state.step`.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    data: &[TrainSample],
) -> Result<StepMetrics> {
    let (x, y, mut rng) = assemble_batch::<T>(data, cfg, state.step)?;
    let z = state.model.net.sample_latent::<T>(&mut rng, cfg.batch);
    let tape = Tape::new();
    let p = state.model.params.bind(&tape);
    let m = Bind {
        net: &state.model.net,
        p: &p,
    };
    let loss = full_loss(
        &m,
        tape.constant(x),
        tape.constant(y),
        tape.constant(z),
        &cfg.weights,
    )?;
    let (full, rec, sty) = loss.values();
    if !full.is_finite() {
        return Err(Error::Numerical(format!(
            "loss is {full} at step {}",
            state.step
        )));
    }
    let terms = loss.rec.terms.map(|t| t.item().f64());
    tape.backward(loss.full)?;
    let mut grads = p.grads(&state.model.params);
    drop(p);
    let grad_norm = clip_global_norm(&mut grads, cfg.clip);
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!(
            "gradient norm is {grad_norm} at step {}",
            state.step
        )));
    }
    let (lr_main, lr_gen) = cfg.lrs(state.step);
    state
        .opt_main
        .step(&mut state.model.params, &grads, lr_main)?;
    state
        .opt_gen
        .step(&mut state.model.params, &grads, lr_gen)?;
    let metrics = StepMetrics {
        step: state.step,
        lr_main,
        lr_gen,
        loss_full: full,
        loss_rec: rec,
        loss_sty: sty,
        terms,
        grad_norm,
    };
    state.step += 1;
    Ok(metrics)
}

/// Mean PSNR of sampled-style denoising over the first `n` validation images.
pub fn validation_psnr<T: Scalar>(
    model: &Model<T>,
    val: &[TrainSample],
    n: usize,
    seed: u64,
) -> Result<f64> {
    let n = n.min(val.len());
    if n == 0 {
        return Err(Error::Invalid("no validation samples".into()));
    }
    let mut rng = Rng::derive(seed, 0x7A1);
    let mut total = 0.0;
    for s in &val[..n] {
        let x = s.noisy.cast::<T>().reshape(&[
            1,
            s.noisy.shape()[0],
            s.noisy.shape()[1],
            s.noisy.shape()[2],
        ])?;
        let out = model
            .net
            .denoise_tensor(&model.params, &x, None, &mut rng)?;
        total += psnr(&out.cast::<f32>().reshape(s.clean.shape())?, &s.clean, 1.0)?;
    }
    Ok(total / n as f64)
}

/// A line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr_main: f64,
    pub lr_gen: f64,
    pub loss_full: f64,
    pub loss_rec: f64,
    pub loss_sty: f64,
    pub psnr_val: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let psnr = self.psnr_val.map(|v| format!("{v:.4}")).unwrap_or_default();
        format!(
            "{},{:e},{:e},{:.6},{:.6},{:.6},{psnr}",
            self.step, self.lr_main, self.lr_gen, self.loss_full, self.loss_rec, self.loss_sty
        )
    }
}

const OPT_STEP_KEY: &str = "opt/step";

/// Parameters, optimizer moments, step counter and config text.
pub fn state_checkpoint<T: Scalar>(state: &TrainState<T>, config_text: &str) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.set_config(config_text);
    for (name, e) in state.model.param_entries() {
        ck.push(name, e);
    }
    for opt in [&state.opt_main, &state.opt_gen] {
        for (k, id) in opt.ids.iter().enumerate() {
            let name = state.model.params.name(*id);
            ck.push(format!("opt/{name}/m1"), Entry::from_tensor(&opt.m1[k]));
            ck.push(format!("opt/{name}/m2"), Entry::from_tensor(&opt.m2[k]));
        }
    }
    ck.push(OPT_STEP_KEY, Entry::F64(Tensor::scalar(state.step as f64)));
    ck
}

/// Rebuild a training state from `model`'s structure and a checkpoint written by
/// [`state_checkpoint`]. A checkpoint without optimizer entries yields fresh moments.
pub fn restore_state<T: Scalar>(mut model: Model<T>, ck: &Checkpoint) -> Result<TrainState<T>> {
    model.load_params(ck)?;
    let mut state = init_state(model);
    let Some(Entry::F64(step)) = ck.get(OPT_STEP_KEY) else {
        return Ok(state);
    };
    let step = step.data().first().copied().unwrap_or(0.0);
    if !(step >= 0.0 && step.fract() == 0.0) {
        return Err(Error::Format(format!("bad optimizer step {step}")));
    }
    state.step = step as u64;
    let params = &state.model.params;
    for opt in [&mut state.opt_main, &mut state.opt_gen] {
        opt.step = state.step;
        for (k, id) in opt.ids.iter().enumerate() {
            let name = params.name(*id);
            for (slot, tag) in [(&mut opt.m1[k], "m1"), (&mut opt.m2[k], "m2")] {
                let t: Tensor<T> = ck.tensor(&format!("opt/{name}/{tag}"))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!(
                        "moment {tag} of {name} has shape {:?}",
                        t.shape()
                    )));
                }
                *slot = t;
            }
        }
    }
    Ok(state)
}

/// Where [`train`] writes its outputs.
#[derive(Clone, Debug)]
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
    /// Embedded in every checkpoint.
    pub config_text: &'a str,
}

impl TrainOutput<'_> {
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.sdid")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

/// Run from `state.step` to `cfg.steps`. With an output directory, metrics are
/// appended to `metrics.csv` and checkpoints go to `last.sdid` (plus
/// `step_<n>.sdid` at each checkpoint interval). A numerical failure reports the
/// last checkpoint written.
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    data: &[TrainSample],
    val: &[TrainSample],
    out: Option<&TrainOutput<'_>>,
    on_log: &mut dyn FnMut(&MetricsRow, &StepMetrics),
) -> Result<Vec<MetricsRow>> {
    cfg.validate(state.model.cfg().size_multiple())?;
    let mut log = match out {
        Some(o) => {
            std::fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
            let path = o.metrics();
            let fresh = !path.exists() || state.step == 0;
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };
    let mut last_good: Option<PathBuf> = None;
    if let Some(o) = out {
        state_checkpoint(state, o.config_text).save(&o.last())?;
        last_good = Some(o.last());
    }
    let mut rows = Vec::new();
    while state.step < cfg.steps {
        let m = match train_step(state, cfg, data) {
            Ok(m) => m,
            Err(Error::Numerical(msg)) => {
                let hint = last_good
                    .map(|p| format!("; last good checkpoint {}", p.display()))
                    .unwrap_or_default();
                return Err(Error::Numerical(format!("{msg}{hint}")));
            }
            Err(e) => return Err(e),
        };
        let done = state.step;
        let want_val = !val.is_empty()
            && cfg.val_interval > 0
            && (done.is_multiple_of(cfg.val_interval) || done == cfg.steps);
        let want_log = want_val
            || (cfg.log_interval > 0 && done.is_multiple_of(cfg.log_interval))
            || done == cfg.steps;
        if want_log {
            let psnr_val = if want_val {
                Some(validation_psnr(
                    &state.model,
                    val,
                    cfg.val_samples,
                    cfg.seed,
                )?)
            } else {
                None
            };
            let row = MetricsRow {
                step: done,
                lr_main: m.lr_main,
                lr_gen: m.lr_gen,
                loss_full: m.loss_full,
                loss_rec: m.loss_rec,
                loss_sty: m.loss_sty,
                psnr_val,
            };
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{}", row.to_csv()).map_err(|e| Error::io(&*path, e))?;
                f.flush().map_err(|e| Error::io(&*path, e))?;
            }
            on_log(&row, &m);
            rows.push(row);
        }
        if let Some(o) = out {
            let periodic = cfg.ckpt_interval > 0 && done.is_multiple_of(cfg.ckpt_interval);
            if periodic || done == cfg.steps {
                let ck = state_checkpoint(state, o.config_text);
                ck.save(&o.last())?;
                if periodic {
                    ck.save(&o.dir.join(format!("step_{done}.sdid")))?;
                }
                last_good = Some(o.last());
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::rand_uniform;

    fn img(h: usize, w: usize) -> Tensor<f64> {
        rand_uniform(
            &mut Rng::new(h as u64 * 31 + w as u64),
            &[2, h, w],
            0.0,
            1.0,
        )
    }

    #[test]
    fn code_zero_is_identity() {
        let x = img(3, 5);
        assert_eq!(augment(&x, 0).unwrap(), x);
    }

    #[test]
    fn inverse_undoes_every_code() {
        let x = img(3, 5);
        for code in 0..8 {
            let y = augment(&x, code).unwrap();
            assert_eq!(augment_inverse(&y, code).unwrap(), x, "code {code}");
        }
        assert!(augment(&x, 8).is_err());
    }

    #[test]
    fn eight_codes_are_distinct() {
        let x = img(4, 4);
        let outs: Vec<_> = (0..8).map(|c| augment(&x, c).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(outs[i], outs[j], "codes {i} and {j}");
            }
        }
    }

    #[test]
    fn quarter_turn_matches_index_oracle() {
        // 1×2×3 image, one counter-clockwise turn gives 3×2
        let x = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = augment(&x, 1).unwrap();
        assert_eq!(r.shape(), &[1, 3, 2]);
        assert_eq!(r.data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
        let f = augment(&x, 4).unwrap();
        assert_eq!(f.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn four_turns_are_identity() {
        let x = img(3, 5);
        let mut y = x.clone();
        for _ in 0..4 {
            y = augment(&y, 1).unwrap();
        }
        assert_eq!(y, x);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g: Vec<Tensor<f64>> = vec![
            Tensor::new(&[2], vec![3.0, 0.0]).unwrap(),
            Tensor::new(&[1], vec![4.0]).unwrap(),
        ];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after: f64 = g.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
        let mut h = g.clone();
        assert!((clip_global_norm(&mut h, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(h, g);
    }

    #[test]
    fn schedule_runs_both_rates_to_the_floor() {
        let cfg = TrainConfig {
            steps: 10,
            ..Default::default()
        };
        assert_eq!(cfg.lrs(0), (cfg.lr_main, cfg.lr_gen));
        let (a, b) = cfg.lrs(10);
        assert!((a - cfg.lr_min).abs() < 1e-18 && (b - cfg.lr_min).abs() < 1e-18);
    }

    #[test]
    fn crop_must_fit_the_model_multiple() {
        let cfg = TrainConfig {
            crop: 24,
            ..Default::default()
        };
        assert!(cfg.validate(16).is_err());
        assert!(TrainConfig::default().validate(16).is_ok());
    }

    #[test]
    fn metrics_row_csv_columns() {
        let row = MetricsRow {
            step: 3,
            lr_main: 1e-4,
            lr_gen: 1e-6,
            loss_full: 0.5,
            loss_rec: 0.4,
            loss_sty: 1.0,
            psnr_val: None,
        };
        let line = row.to_csv();
        assert_eq!(line.split(',').count(), METRICS_HEADER.split(',').count());
        assert!(line.ends_with(','));
    }
}
