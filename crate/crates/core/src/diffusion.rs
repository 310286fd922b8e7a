//! Noise schedule and prior-conditioned diffusion over class vectors.
//!
//! The forward process corrupts a clean label vector `y0` toward a
//! prior-shifted Gaussian:
//!
//! ```text
//! y_t = sqrt(ab_t) * y0 + (1 - sqrt(ab_t)) * prior + sqrt(1 - ab_t) * eps
//! ```
//!
//! where `ab_t` is the cumulative product of `1 - beta` up to step `t` and
//! `ab_0 = 1`. In the centred variable `y - prior` this is an ordinary DDPM,
//! which is what makes the posterior coefficients below close in form.
//!
//! All randomness is passed in by the caller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag describing which constraint a [`ClassVector`] satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorKind {
    OneHot,
    Distribution,
    Raw,
}

/// Length-C real vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVector {
    values: Vec<f64>,
    kind: VectorKind,
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

impl ClassVector {
    pub fn one_hot(classes: usize, index: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "class vectors need at least 2 classes, got {classes}"
            )));
        }
        if index >= classes {
            return Err(Error::invalid(format!(
                "class index {index} out of range for {classes} classes"
            )));
        }
        let mut values = vec![0.0; classes];
        values[index] = 1.0;
        Ok(Self {
            values,
            kind: VectorKind::OneHot,
        })
    }

    pub fn distribution(values: Vec<f64>) -> Result<Self> {
        check_len(values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "distribution entries must be finite and nonnegative",
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::invalid(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self {
            values,
            kind: VectorKind::Distribution,
        })
    }

    pub fn raw(values: Vec<f64>) -> Result<Self> {
        check_len(values.len())?;
        Ok(Self {
            values,
            kind: VectorKind::Raw,
        })
    }

    /// Softmax of `logits`, tagged as a distribution.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        check_len(logits.len())?;
        Ok(Self {
            values: softmax(logits),
            kind: VectorKind::Distribution,
        })
    }

    /// Elementwise mean of two distributions; the result is again a distribution.
    pub fn mean_of(a: &ClassVector, b: &ClassVector) -> Result<Self> {
        same_len(a.len(), b.len())?;
        Ok(Self {
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
            kind: if a.kind == VectorKind::Raw || b.kind == VectorKind::Raw {
                VectorKind::Raw
            } else {
                VectorKind::Distribution
            },
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> VectorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

fn check_len(len: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::invalid(format!(
            "class vectors need at least 2 classes, got {len}"
        )));
    }
    Ok(())
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-step variance tables. `alpha_bar` is indexed `0..=T` with
/// `alpha_bar[0] = 1`; `beta(t)` and `alpha(t)` are defined for `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule: `beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let span = beta_end - beta_start;
        let denom = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| beta_start + i as f64 / denom * span)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { betas, alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside {min}..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Coefficients `(g0, g1, g2, var)` of the posterior `q(y_s | y_t, y0)` for
    /// `s < t`: mean `g0*y0 + g1*y_t + g2*prior`, variance `var`.
    ///
    /// With `s = t - 1` these are the usual single-step posterior; for larger
    /// gaps the per-step quantities are replaced by their cumulative
    /// equivalents (`alpha -> ab_t / ab_s`).
    pub fn posterior_coefficients(&self, t: usize, s: usize) -> Result<PosteriorCoefficients> {
        self.check_step(t, 1)?;
        if s >= t {
            return Err(Error::invalid(format!("target step {s} must precede {t}")));
        }
        let ab_t = self.alpha_bar[t];
        let ab_s = self.alpha_bar[s];
        let alpha = ab_t / ab_s;
        let beta = 1.0 - alpha;
        let denom = 1.0 - ab_t;
        let g0 = ab_s.sqrt() * beta / denom;
        let g1 = alpha.sqrt() * (1.0 - ab_s) / denom;
        let g2 = 1.0 + (ab_t.sqrt() - 1.0) * (alpha.sqrt() + ab_s.sqrt()) / denom;
        let variance = (1.0 - ab_s) * beta / denom;
        Ok(PosteriorCoefficients {
            y0: g0,
            yt: g1,
            prior: g2,
            variance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub y0: f64,
    pub yt: f64,
    pub prior: f64,
    pub variance: f64,
}

/// Closed-form forward corruption for an explicit `alpha_bar` value.
pub fn diffuse_with_alpha_bar(y0: &[f64], prior: &[f64], alpha_bar: f64, eps: &[f64]) -> Vec<f64> {
    let signal = alpha_bar.sqrt();
    let shift = 1.0 - signal;
    let noise = (1.0 - alpha_bar).sqrt();
    y0.iter()
        .zip(prior)
        .zip(eps)
        .map(|((y, p), e)| signal * y + shift * p + noise * e)
        .collect()
}

/// Inverse of [`diffuse_with_alpha_bar`] given the noise.
pub fn recover_with_alpha_bar(y_t: &[f64], prior: &[f64], alpha_bar: f64, eps: &[f64]) -> Vec<f64> {
    let signal = alpha_bar.sqrt();
    let shift = 1.0 - signal;
    let noise = (1.0 - alpha_bar).sqrt();
    y_t.iter()
        .zip(prior)
        .zip(eps)
        .map(|((y, p), e)| (y - shift * p - noise * e) / signal)
        .collect()
}

fn check_dims(expected: usize, others: &[usize]) -> Result<()> {
    for &n in others {
        same_len(expected, n)?;
    }
    Ok(())
}

/// Samples `y_t` given `y0`, the prior and caller-supplied noise. `t = 0`
/// returns `y0` unchanged.
pub fn forward_diffuse(
    y0: &ClassVector,
    prior: &ClassVector,
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<ClassVector> {
    check_dims(y0.len(), &[prior.len(), eps.len()])?;
    schedule.check_step(t, 0)?;
    if t == 0 {
        return ClassVector::raw(y0.values.clone());
    }
    ClassVector::raw(diffuse_with_alpha_bar(
        &y0.values,
        &prior.values,
        schedule.alpha_bar(t),
        eps,
    ))
}

/// Estimates the clean vector from `y_t` and a noise estimate.
pub fn predict_y0(
    y_t: &ClassVector,
    eps_hat: &[f64],
    prior: &ClassVector,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ClassVector> {
    check_dims(y_t.len(), &[prior.len(), eps_hat.len()])?;
    schedule.check_step(t, 1)?;
    ClassVector::raw(recover_with_alpha_bar(
        &y_t.values,
        &prior.values,
        schedule.alpha_bar(t),
        eps_hat,
    ))
}

/// One ancestral step `t -> t-1`. `z` is ignored at `t = 1`.
pub fn reverse_step(
    y_t: &ClassVector,
    eps_hat: &[f64],
    prior: &ClassVector,
    t: usize,
    z: &[f64],
    schedule: &NoiseSchedule,
) -> Result<ClassVector> {
    reverse_step_to(y_t, eps_hat, prior, t, t.saturating_sub(1), z, schedule)
}

/// Ancestral step from `t` to any earlier `s`. Noise is dropped when `s = 0`.
pub fn reverse_step_to(
    y_t: &ClassVector,
    eps_hat: &[f64],
    prior: &ClassVector,
    t: usize,
    s: usize,
    z: &[f64],
    schedule: &NoiseSchedule,
) -> Result<ClassVector> {
    check_dims(y_t.len(), &[prior.len(), eps_hat.len(), z.len()])?;
    let y0_hat = predict_y0(y_t, eps_hat, prior, t, schedule)?;
    let c = schedule.posterior_coefficients(t, s)?;
    let sigma = if s == 0 { 0.0 } else { c.variance.sqrt() };
    let values = y0_hat
        .values
        .iter()
        .zip(&y_t.values)
        .zip(&prior.values)
        .zip(z)
        .map(|(((y0, yt), p), z)| c.y0 * y0 + c.yt * yt + c.prior * p + sigma * z)
        .collect();
    ClassVector::raw(values)
}

/// Descending timesteps for strided sampling: `count` evenly spaced steps of
/// `1..=T` ending at `T`. Each entry steps to the next one; the last steps to 0.
pub fn step_sequence(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::invalid(format!(
            "step count {count} must lie in 1..={total}"
        )));
    }
    let mut steps: Vec<usize> = (1..=count).map(|i| (i * total).div_ceil(count)).collect();
    steps.dedup();
    steps.reverse();
    Ok(steps)
}
