//! Named parameters and the small layers every module is built from.

use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::ndgrad::{init_uniform_gain, Rng, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copy every parameter onto `tape` as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Like [`bind`](Self::bind) but without gradient tracking.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.constant(v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Parameters of one [`ParamStore`] placed on a tape.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Wrap vars that line up one-to-one with a store's parameters.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradients of every parameter after `backward`; untouched ones are zero.
    pub fn grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(&store.values)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

impl<'t, T: Scalar> Index<ParamId> for Bound<'t, T> {
    type Output = Var<'t, T>;

    fn index(&self, id: ParamId) -> &Var<'t, T> {
        &self.vars[id.0]
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<'b>(&'b mut self, name: &str) -> Init<'b, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(&full, value)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.uniform_gain(name, shape, fan_in, 1.0)
    }

    pub fn uniform_gain(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
    ) -> Result<ParamId> {
        let v = init_uniform_gain(self.rng, shape, fan_in, gain);
        self.tensor(name, v)
    }
}

/// Affine map `x·W + b` on the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = init.uniform("w", &[d_in, d_out], d_in)?;
        let b = if bias {
            Some(init.tensor("b", Tensor::zeros(&[d_out]))?)
        } else {
            None
        };
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(p[self.w], self.b.map(|b| p[b]))
    }

    pub fn numel(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }
}

/// √6: Uniform(±√(6/fan_in)) has variance 2/fan_in.
pub const RELU_GAIN: f64 = 2.449_489_742_783_178;

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// "Same" padding (`k/2`) at the given stride.
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::with_gain(init, c_in, c_out, k, stride, 1.0)
    }

    /// Like [`Conv::new`] with the weight bound scaled by `gain`.
    /// [`RELU_GAIN`] keeps the second moment through a following ReLU.
    pub fn with_gain<T: Scalar>(
        init: &mut Init<'_, T>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        let w = init.uniform_gain("w", &[c_out, c_in, k, k], c_in * k * k, gain)?;
        let b = init.tensor("b", Tensor::zeros(&[c_out]))?;
        Ok(Conv {
            w,
            b,
            k,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p[self.w], Some(p[self.b]), self.stride, self.pad)
    }

    pub fn numel(c_in: usize, c_out: usize, k: usize) -> usize {
        c_out * c_in * k * k + c_out
    }
}

/// Layer normalization with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, d: usize, eps: f64) -> Result<Self> {
        let gamma = init.tensor("gamma", Tensor::full(&[d], T::one()))?;
        let beta = init.tensor("beta", Tensor::zeros(&[d]))?;
        Ok(LayerNorm { gamma, beta, eps })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(Some((p[self.gamma], p[self.beta])), self.eps)
    }
}
