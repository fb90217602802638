//! Training objective, optimizers, schedule and the training loop.

mod adam;
mod train;

pub use adam::{cosine_lr, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    assemble_batch, augment, augment_inverse, clip_global_norm, init_state, restore_state,
    state_checkpoint, train, train_step, validation_psnr, MetricsRow, StepMetrics, TrainConfig,
    TrainOutput, TrainState, METRICS_HEADER,
};

use crate::error::{Error, Result};
use crate::ndgrad::{Scalar, Var};
use crate::nn::Bound;
use crate::sdidnet::SdidNet;

/// Weights of the reconstruction and style terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_sty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.3,
            lambda_sty: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda_sty]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The five sub-networks the losses need, bound to one tape.
pub trait StyleModel<'t, T: Scalar> {
    fn encode(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
    fn decode(&self, f: Var<'t, T>) -> Result<Var<'t, T>>;
    fn convert(&self, f: Var<'t, T>, style: Var<'t, T>) -> Result<Var<'t, T>>;
    fn extract(&self, img: Var<'t, T>) -> Result<Var<'t, T>>;
    fn generate(&self, z: Var<'t, T>) -> Result<Var<'t, T>>;
}

/// [`SdidNet`] with its parameters on a tape.
pub struct Bind<'a, 't, T: Scalar> {
    pub net: &'a SdidNet,
    pub p: &'a Bound<'t, T>,
}

impl<'a, 't, T: Scalar> StyleModel<'t, T> for Bind<'a, 't, T> {
    fn encode(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.encode(self.p, x)
    }
    fn decode(&self, f: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.decode(self.p, f)
    }
    fn convert(&self, f: Var<'t, T>, style: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.convert(self.p, f, style)
    }
    fn extract(&self, img: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.extract(self.p, img)
    }
    fn generate(&self, z: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.generate(self.p, z)
    }
}

/// Reconstruction loss with its five L1 terms in order: noisy identity, clean
/// identity, noisy-style reconstruction, clean-style denoising, sampled-style
/// denoising.
pub struct RecLoss<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub terms: [Var<'t, T>; 5],
    pub s_noise: Var<'t, T>,
    pub s_noise_free: Var<'t, T>,
    pub s_gen: Var<'t, T>,
    /// Output of the sampled-style branch.
    pub x_trg: Var<'t, T>,
}

pub struct FullLoss<'t, T: Scalar> {
    pub full: Var<'t, T>,
    pub rec: RecLoss<'t, T>,
    pub sty: Var<'t, T>,
}

impl<T: Scalar> FullLoss<'_, T> {
    /// `(full, rec, sty)` as plain numbers.
    pub fn values(&self) -> (f64, f64, f64) {
        (
            self.full.item().f64(),
            self.rec.total.item().f64(),
            self.sty.item().f64(),
        )
    }
}

/// `z` is the generator input, one row per sample.
pub fn reconstruction_loss<'t, T: Scalar, M: StyleModel<'t, T>>(
    m: &M,
    x: Var<'t, T>,
    y: Var<'t, T>,
    z: Var<'t, T>,
    w: &LossWeights,
) -> Result<RecLoss<'t, T>> {
    if x.shape() != y.shape() {
        return Err(Error::dim(format!(
            "noisy {:?} and clean {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    let fx = m.encode(x)?;
    let fy = m.encode(y)?;
    let s_noise = m.extract(x)?;
    let s_noise_free = m.extract(y)?;
    let s_gen = m.generate(z)?;
    let x_trg = m.decode(m.convert(fx, s_gen)?)?;
    let terms = [
        x.l1(m.decode(fx)?)?,
        y.l1(m.decode(fy)?)?,
        x.l1(m.decode(m.convert(fx, s_noise)?)?)?,
        y.l1(m.decode(m.convert(fx, s_noise_free)?)?)?,
        y.l1(x_trg)?,
    ];
    let near = terms[0].add(terms[1])?.add(terms[2])?.scale(w.lambda1);
    let far = terms[3].add(terms[4])?.scale(w.lambda2);
    Ok(RecLoss {
        total: near.add(far)?,
        terms,
        s_noise,
        s_noise_free,
        s_gen,
        x_trg,
    })
}

/// `‖s_gen − ext(x_trg)‖₁ + ‖s_gen − s_noise_free‖₁`; gradients reach both the
/// generator and the extractor.
pub fn style_regression_terms<'t, T: Scalar, M: StyleModel<'t, T>>(
    m: &M,
    x_trg: Var<'t, T>,
    s_gen: Var<'t, T>,
    s_noise_free: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let back = m.extract(x_trg)?;
    s_gen.l1(back)?.add(s_gen.l1(s_noise_free)?)
}

/// Style regression computed from scratch.
pub fn style_regression_loss<'t, T: Scalar, M: StyleModel<'t, T>>(
    m: &M,
    x: Var<'t, T>,
    y: Var<'t, T>,
    z: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let s_gen = m.generate(z)?;
    let x_trg = m.decode(m.convert(m.encode(x)?, s_gen)?)?;
    style_regression_terms(m, x_trg, s_gen, m.extract(y)?)
}

/// `L_rec + λ_sty·L_sty`, sharing the sampled-style branch between both.
pub fn full_loss<'t, T: Scalar, M: StyleModel<'t, T>>(
    m: &M,
    x: Var<'t, T>,
    y: Var<'t, T>,
    z: Var<'t, T>,
    w: &LossWeights,
) -> Result<FullLoss<'t, T>> {
    let rec = reconstruction_loss(m, x, y, z, w)?;
    let sty = style_regression_terms(m, rec.x_trg, rec.s_gen, rec.s_noise_free)?;
    let full = rec.total.add(sty.scale(w.lambda_sty))?;
    Ok(FullLoss { full, rec, sty })
}

/// `rec + λ_sty·sty` on plain numbers.
pub fn combine(rec: f64, sty: f64, w: &LossWeights) -> f64 {
    rec + w.lambda_sty * sty
}
