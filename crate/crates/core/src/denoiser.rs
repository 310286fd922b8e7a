//! Conditional noise estimator `eps(rho(x), y_t, y_g, y_l, t)`.
//!
//! `[y_t | y_g | y_l]` is projected to a latent vector, which runs through
//! residual blocks. Each block is modulated feature-wise (scale and shift)
//! by a linear function of `[rho(x) | time_embedding(t)]`. A zero-initialized
//! linear head maps the latent back to C noise components.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::ClassVector;
use crate::error::{Error, Result};
use crate::guidance::DualPrior;
use crate::nn::{silu, silu_grad, Linear, Param, Parameters};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub classes: usize,
    /// Length of the image feature vector `rho(x)`.
    pub feature_dim: usize,
    /// Hidden width of the trunk.
    pub latent: usize,
    pub blocks: usize,
    pub time_dim: usize,
}

impl DenoiserConfig {
    pub fn full(classes: usize, feature_dim: usize) -> Self {
        Self {
            classes,
            feature_dim,
            latent: 6144,
            blocks: 2,
            time_dim: 128,
        }
    }

    pub fn desk(classes: usize, feature_dim: usize) -> Self {
        Self {
            classes,
            feature_dim,
            latent: 128,
            blocks: 2,
            time_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("denoiser needs at least 2 classes"));
        }
        if self.latent < self.classes {
            return Err(Error::invalid(format!(
                "latent width {} is smaller than the class count {}",
                self.latent, self.classes
            )));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid(
                "time embedding width must be even and positive",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        Ok(())
    }

    /// Trainable values, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<u64> {
        let linear = |i: usize, o: usize| (i as u64).checked_mul(o as u64)?.checked_add(o as u64);
        let l = self.latent;
        let cond = self.feature_dim.checked_add(self.time_dim)?;
        let block = linear(cond, l.checked_mul(2)?)?.checked_add(linear(l, l)?.checked_mul(2)?)?;
        linear(self.classes.checked_mul(3)?, l)?
            .checked_add(block.checked_mul(self.blocks as u64)?)?
            .checked_add(linear(l, self.classes)?)
    }
}

/// Sinusoidal timestep embedding with interleaved `(sin, cos)` pairs at
/// geometrically spaced frequencies `10000^(-i / (dim/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "embedding width must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput {
    pub rho: Vec<f64>,
    pub y_t: ClassVector,
    pub prior: DualPrior,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    film: Linear,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    act: Vec<f64>,
    pre: Vec<f64>,
    gamma: Vec<f64>,
    modulated: Vec<f64>,
    hidden: Vec<f64>,
}

/// Activations retained for [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct DenoiserTrace {
    concat: Vec<f64>,
    cond: Vec<f64>,
    blocks: Vec<BlockTrace>,
    last: Vec<f64>,
    last_act: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    project: Linear,
    blocks: Vec<Block>,
    head: Linear,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.classes;
        let l = config.latent;
        let cond = config.feature_dim + config.time_dim;
        let blocks = (0..config.blocks)
            .map(|i| Block {
                film: Linear::new(&format!("denoiser.block{i}.film"), cond, 2 * l, rng),
                fc1: Linear::new(&format!("denoiser.block{i}.fc1"), l, l, rng),
                fc2: Linear::new(&format!("denoiser.block{i}.fc2"), l, l, rng),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            project: Linear::new("denoiser.project", 3 * c, l, rng),
            blocks,
            head: Linear::zeroed("denoiser.head", l, c),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Linear map of `[y_t | y_g | y_l]` into the latent space.
    pub fn project_to_latent(
        &self,
        y_t: &ClassVector,
        y_g: &ClassVector,
        y_l: &ClassVector,
    ) -> Result<Vec<f64>> {
        let c = self.config.classes;
        if y_t.len() != c || y_g.len() != c || y_l.len() != c {
            return Err(Error::invalid(format!(
                "class vectors must have length {c}, got ({}, {}, {})",
                y_t.len(),
                y_g.len(),
                y_l.len()
            )));
        }
        Ok(self.project.forward(&concat(y_t, y_g, y_l)))
    }

    pub fn estimate_noise(&self, input: &DenoiserInput) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    pub fn forward(&self, input: &DenoiserInput) -> Result<(Vec<f64>, DenoiserTrace)> {
        if input.rho.len() != self.config.feature_dim {
            return Err(Error::invalid(format!(
                "image feature has length {}, expected {}",
                input.rho.len(),
                self.config.feature_dim
            )));
        }
        if input.t == 0 {
            return Err(Error::invalid("denoiser timestep must be at least 1"));
        }
        let mut h = self.project_to_latent(&input.y_t, &input.prior.global, &input.prior.local)?;
        check_finite(&h, 0)?;
        let mut cond = input.rho.clone();
        cond.extend(time_embedding(input.t, self.config.time_dim)?);

        let l = self.config.latent;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let act: Vec<f64> = h.iter().map(|v| silu(*v)).collect();
            let pre = block.fc1.forward(&act);
            let film = block.film.forward(&cond);
            let (gamma, beta) = film.split_at(l);
            let modulated: Vec<f64> = pre
                .iter()
                .zip(gamma.iter().zip(beta))
                .map(|(u, (g, b))| u * (1.0 + g) + b)
                .collect();
            let inner: Vec<f64> = modulated.iter().map(|v| silu(*v)).collect();
            let delta = block.fc2.forward(&inner);
            let hidden = h.clone();
            for (a, d) in h.iter_mut().zip(&delta) {
                *a += d;
            }
            check_finite(&h, i + 1)?;
            traces.push(BlockTrace {
                act,
                pre,
                gamma: gamma.to_vec(),
                modulated,
                hidden,
            });
        }
        let last_act: Vec<f64> = h.iter().map(|v| silu(*v)).collect();
        let out = self.head.forward(&last_act);
        check_finite(&out, self.blocks.len() + 1)?;
        Ok((
            out,
            DenoiserTrace {
                concat: concat(&input.y_t, &input.prior.global, &input.prior.local),
                cond,
                blocks: traces,
                last: h,
                last_act,
            },
        ))
    }

    /// Accumulates parameter gradients for `dL/d(eps_hat) = grad_out` and
    /// returns the gradient w.r.t. `rho(x)`.
    pub fn backward(
        &self,
        trace: &DenoiserTrace,
        grad_out: &[f64],
        grads: &mut Denoiser,
    ) -> Vec<f64> {
        let l = self.config.latent;
        let g_act = self
            .head
            .backward(&trace.last_act, grad_out, &mut grads.head);
        let mut gh: Vec<f64> = g_act
            .iter()
            .zip(&trace.last)
            .map(|(g, x)| g * silu_grad(*x))
            .collect();
        let mut g_cond = vec![0.0; trace.cond.len()];
        for ((block, bt), gblock) in self
            .blocks
            .iter()
            .zip(&trace.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            let inner: Vec<f64> = bt.modulated.iter().map(|v| silu(*v)).collect();
            let g_inner = block.fc2.backward(&inner, &gh, &mut gblock.fc2);
            let g_mod: Vec<f64> = g_inner
                .iter()
                .zip(&bt.modulated)
                .map(|(g, m)| g * silu_grad(*m))
                .collect();
            let mut g_film = vec![0.0; 2 * l];
            let mut g_pre = vec![0.0; l];
            for i in 0..l {
                g_pre[i] = g_mod[i] * (1.0 + bt.gamma[i]);
                g_film[i] = g_mod[i] * bt.pre[i];
                g_film[l + i] = g_mod[i];
            }
            let gc = block.film.backward(&trace.cond, &g_film, &mut gblock.film);
            for (a, b) in g_cond.iter_mut().zip(&gc) {
                *a += b;
            }
            let g_act = block.fc1.backward(&bt.act, &g_pre, &mut gblock.fc1);
            for ((g, ga), x) in gh.iter_mut().zip(&g_act).zip(&bt.hidden) {
                *g += ga * silu_grad(*x);
            }
        }
        self.project
            .backward(&trace.concat, &gh, &mut grads.project);
        g_cond.truncate(self.config.feature_dim);
        g_cond
    }
}

impl Parameters for Denoiser {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.project.collect(out);
        for b in &self.blocks {
            b.film.collect(out);
            b.fc1.collect(out);
            b.fc2.collect(out);
        }
        self.head.collect(out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.project.collect_mut(out);
        for b in &mut self.blocks {
            b.film.collect_mut(out);
            b.fc1.collect_mut(out);
            b.fc2.collect_mut(out);
        }
        self.head.collect_mut(out);
    }
}

fn concat(y_t: &ClassVector, y_g: &ClassVector, y_l: &ClassVector) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * y_t.len());
    v.extend_from_slice(y_t.values());
    v.extend_from_slice(y_g.values());
    v.extend_from_slice(y_l.values());
    v
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!(
            "non-finite activation in denoiser layer {layer}"
        )))
    }
}
