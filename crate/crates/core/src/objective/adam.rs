use crate::error::{Error, Result};
use crate::ndgrad::{Scalar, Tensor};
use crate::nn::{ParamId, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction over a subset of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub ids: Vec<ParamId>,
    pub m1: Vec<Tensor<T>>,
    pub m2: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, ids: Vec<ParamId>) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.get(*id).shape());
        Adam {
            m1: ids.iter().map(zeros).collect(),
            m2: ids.iter().map(zeros).collect(),
            ids,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One update. `grads` is indexed by [`ParamId`] over the whole store.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::dim(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (k, id) in self.ids.iter().enumerate() {
            if grads[id.0].shape() != store.get(*id).shape() {
                return Err(Error::dim(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    grads[id.0].shape(),
                    store.name(*id),
                    store.get(*id).shape()
                )));
            }
            debug_assert_eq!(self.m1[k].shape(), store.get(*id).shape());
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, id) in self.ids.iter().enumerate() {
            let g = grads[id.0].data();
            let m1 = self.m1[k].data_mut();
            let m2 = self.m2[k].data_mut();
            let p = store.get_mut(*id).data_mut();
            for i in 0..p.len() {
                let gi = g[i].f64();
                let a = b1 * m1[i].f64() + (1.0 - b1) * gi;
                let v = b2 * m2[i].f64() + (1.0 - b2) * gi * gi;
                m1[i] = T::c(a);
                m2[i] = T::c(v);
                let upd = lr * (a / c1) / ((v / c2).sqrt() + self.eps);
                p[i] = T::c(p[i].f64() - upd);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, held at `lr_min` past `total`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let t = (step.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
