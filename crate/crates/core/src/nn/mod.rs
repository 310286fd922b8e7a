//! Minimal dense/convolutional layers with hand-written backward passes.
//!
//! Every layer keeps its weights in named [`Param`]s. Gradients are held in a
//! second instance of the same layer type (see [`zeros_like`]), so optimizers,
//! checkpoints and finite-difference checks all walk parameters the same way.

mod adam;
mod conv;
mod encoder;
mod linear;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, ConvCache, MaxPool2d, PoolCache};
pub use encoder::{
    global_average_pool, global_average_pool_backward, Encoder, EncoderConfig, EncoderTrace,
    StageConfig,
};
pub use linear::Linear;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param data does not match shape"
        );
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, shape, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// Anything that owns trainable parameters.
pub trait Parameters {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Copy of `module` with every parameter zeroed; used as a gradient buffer.
pub fn zeros_like<T: Parameters + Clone>(module: &T) -> T {
    let mut out = module.clone();
    for p in out.params_mut() {
        p.fill(0.0);
    }
    out
}

/// `dst += scale * src`, parameter by parameter.
pub fn accumulate<T: Parameters>(dst: &mut T, src: &T, scale: f64) {
    for (d, s) in dst.params_mut().into_iter().zip(src.params()) {
        for (a, b) in d.data.iter_mut().zip(&s.data) {
            *a += scale * b;
        }
    }
}

pub fn all_finite<T: Parameters>(module: &T) -> bool {
    module
        .params()
        .iter()
        .all(|p| p.data.iter().all(|v| v.is_finite()))
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Gradient of `softmax(logits)` pulled back from `grad_probs`.
pub(crate) fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}
