//! Joint training of the guidance network and the noise estimator.
//!
//! Per sample: guidance priors and `rho(x)`, a uniform timestep, Gaussian
//! noise, `y_t` from the forward process shifted by the mean prior, then
//! `||eps - eps_hat||^2 + lambda * (WCE(y_g) + WCE(y_l))`. The shift and the
//! priors fed to the estimator are constants for the diffusion term; the
//! guidance network learns from the cross-entropy terms and from the gradient
//! reaching `rho(x)`.

use std::io::Write;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, ImageSource};
use crate::denoiser::DenoiserInput;
use crate::diffusion::{forward_diffuse, ClassVector};
use crate::error::{Error, Result};
use crate::model::DiffusionClassifier;
use crate::nn::{zeros_like, Adam, AdamConfig, Parameters};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    /// `N / (C * n_c)`.
    #[default]
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub class_weights: ClassWeightMode,
    pub seed: u64,
    pub lambda_dcg: f64,
    /// Keep the guidance network fixed.
    pub freeze_dcg: bool,
    /// Guidance-only epochs run before the `epochs` joint epochs.
    pub dcg_warmup_epochs: usize,
    pub augmentation: Augmentation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 30,
            optimizer: AdamConfig::default(),
            class_weights: ClassWeightMode::Balanced,
            seed: 0,
            lambda_dcg: 1.0,
            freeze_dcg: false,
            dcg_warmup_epochs: 0,
            augmentation: Augmentation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.optimizer.learning_rate >= 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be finite and nonnegative",
            ));
        }
        if !(self.lambda_dcg >= 0.0 && self.lambda_dcg.is_finite()) {
            return Err(Error::invalid("lambda_dcg must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `||eps - eps_hat||^2`.
pub fn diffusion_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    if eps.len() != eps_hat.len() {
        return Err(Error::invalid(format!(
            "noise vectors differ in length: {} vs {}",
            eps.len(),
            eps_hat.len()
        )));
    }
    Ok(eps.iter().zip(eps_hat).map(|(a, b)| (a - b).powi(2)).sum())
}

/// `-weights[label] * ln(max(pred[label], 1e-12))`.
pub fn weighted_cross_entropy(pred: &ClassVector, label: usize, weights: &[f64]) -> Result<f64> {
    if label >= pred.len() || label >= weights.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            pred.len()
        )));
    }
    Ok(-weights[label] * pred.values()[label].max(1e-12).ln())
}

/// `N / (C * n_c)` from a label list over `vocabulary`.
pub fn class_weights_from_labels(labels: &[usize], vocabulary: &[String]) -> Result<Vec<f64>> {
    let c = vocabulary.len();
    let mut counts = vec![0usize; c];
    for &l in labels {
        if l >= c {
            return Err(Error::invalid(format!(
                "label {l} out of range for {c} classes"
            )));
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|n| *n == 0) {
        return Err(Error::invalid(format!(
            "class `{}` has no training samples",
            vocabulary[empty]
        )));
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|nc| n / (c as f64 * *nc as f64))
        .collect())
}

pub fn class_weights(manifest: &DatasetManifest) -> Result<Vec<f64>> {
    class_weights_from_labels(&manifest.label_indices(), manifest.vocabulary())
}

/// Uniform draw from `1..=steps`.
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, steps: usize) -> usize {
    rng.gen_range(1..=steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Joint,
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub diffusion: f64,
    pub wce_global: f64,
    pub wce_local: f64,
    pub total: f64,
    pub steps: usize,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// Same record with the timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch record serializes")
    }
}

/// Writes every record as a JSON line to `sink`.
pub fn write_epoch_log<W: Write>(records: &[EpochRecord], mut sink: W) -> std::io::Result<()> {
    for r in records {
        writeln!(sink, "{}", r.to_json_line())?;
    }
    Ok(())
}

struct Sums {
    diffusion: f64,
    wce_global: f64,
    wce_local: f64,
    total: f64,
    samples: usize,
}

fn augment<R: Rng + ?Sized>(image: &Image, aug: &Augmentation, rng: &mut R) -> Option<Image> {
    if !aug.horizontal_flip && !aug.vertical_flip {
        return None;
    }
    let mut out = image.clone();
    if aug.horizontal_flip && rng.gen::<bool>() {
        out.invert_axis(Axis(1));
    }
    if aug.vertical_flip && rng.gen::<bool>() {
        out.invert_axis(Axis(0));
    }
    Some(out.as_standard_layout().into_owned())
}

/// Runs warmup plus `epochs` joint epochs over `images` (labels by index)
/// and calls `on_epoch` after each. Returns the epoch log.
pub fn train_with<S: ImageSource + ?Sized>(
    config: &TrainConfig,
    model: &mut DiffusionClassifier,
    images: &S,
    labels: &[usize],
    mut on_epoch: impl FnMut(&EpochRecord, &DiffusionClassifier) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if images.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let weights = match config.class_weights {
        ClassWeightMode::Balanced => class_weights_from_labels(labels, model.classes())?,
        ClassWeightMode::Uniform => {
            class_weights_from_labels(labels, model.classes())?;
            vec![1.0; model.class_count()]
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dcg_opt = Adam::new(config.optimizer);
    let mut den_opt = Adam::new(config.optimizer);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let total_epochs = config.dcg_warmup_epochs + config.epochs;
    for epoch in 1..=total_epochs {
        let phase = if epoch <= config.dcg_warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Joint
        };
        if phase == Phase::Warmup && config.freeze_dcg {
            return Err(Error::invalid(
                "guidance warmup conflicts with a frozen guidance network",
            ));
        }
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = Sums {
            diffusion: 0.0,
            wce_global: 0.0,
            wce_local: 0.0,
            total: 0.0,
            samples: 0,
        };
        let mut steps = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            train_batch(
                config,
                model,
                images,
                labels,
                &weights,
                batch,
                phase,
                &mut rng,
                &mut sums,
                &mut dcg_opt,
                &mut den_opt,
            )
            .map_err(|e| match e {
                Error::NumericFailure(m) => {
                    Error::NumericFailure(format!("epoch {epoch}, batch {}: {m}", b + 1))
                }
                other => other,
            })?;
            steps += 1;
        }
        let n = sums.samples as f64;
        let record = EpochRecord {
            epoch,
            phase,
            diffusion: sums.diffusion / n,
            wce_global: sums.wce_global / n,
            wce_local: sums.wce_local / n,
            total: sums.total / n,
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{total_epochs} {:?}: total {:.5} diffusion {:.5} wce {:.5}/{:.5}",
            phase,
            record.total,
            record.diffusion,
            record.wce_global,
            record.wce_local
        );
        on_epoch(&record, model)?;
        log.push(record);
    }
    Ok(log)
}

pub fn train<S: ImageSource + ?Sized>(
    config: &TrainConfig,
    model: &mut DiffusionClassifier,
    images: &S,
    labels: &[usize],
) -> Result<Vec<EpochRecord>> {
    train_with(config, model, images, labels, |_, _| Ok(()))
}

#[allow(clippy::too_many_arguments)]
fn train_batch<S: ImageSource + ?Sized>(
    config: &TrainConfig,
    model: &mut DiffusionClassifier,
    images: &S,
    labels: &[usize],
    weights: &[f64],
    batch: &[usize],
    phase: Phase,
    rng: &mut ChaCha8Rng,
    sums: &mut Sums,
    dcg_opt: &mut Adam,
    den_opt: &mut Adam,
) -> Result<()> {
    let c = model.class_count();
    let steps = model.schedule.steps();
    let update_dcg = !config.freeze_dcg;
    let joint = phase == Phase::Joint;
    let lambda = if joint { config.lambda_dcg } else { 1.0 };
    let scale = 1.0 / batch.len() as f64;
    let mut dcg_grads = zeros_like(&model.dcg);
    let mut den_grads = zeros_like(&model.denoiser);

    for &i in batch {
        let label = labels[i];
        let stored = images.image(i)?;
        let augmented = augment(&stored, &config.augmentation, rng);
        let image: &Image = augmented.as_ref().unwrap_or(&*stored);
        let out = model.dcg.forward(image)?;
        let prior = out.prior.clone();
        let wce_g = weighted_cross_entropy(&prior.global, label, weights)?;
        let wce_l = weighted_cross_entropy(&prior.local, label, weights)?;

        let mut diff = 0.0;
        let mut grad_rho = None;
        if joint {
            let t = sample_timestep(rng, steps);
            let eps: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
            let y0 = ClassVector::one_hot(c, label)?;
            let y_t = forward_diffuse(&y0, &prior.mean(), t, &eps, &model.schedule)?;
            let input = DenoiserInput {
                rho: out.feature().to_vec(),
                y_t,
                prior: prior.clone(),
                t,
            };
            let (eps_hat, trace) = model.denoiser.forward(&input)?;
            diff = diffusion_loss(&eps, &eps_hat)?;
            let g: Vec<f64> = eps
                .iter()
                .zip(&eps_hat)
                .map(|(e, h)| -2.0 * (e - h) * scale)
                .collect();
            grad_rho = Some(model.denoiser.backward(&trace, &g, &mut den_grads));
        }
        let total = diff + lambda * (wce_g + wce_l);
        if !total.is_finite() {
            return Err(Error::NumericFailure(format!("non-finite loss {total}")));
        }
        sums.diffusion += diff;
        sums.wce_global += wce_g;
        sums.wce_local += wce_l;
        sums.total += total;
        sums.samples += 1;

        if update_dcg {
            // d/dlogits of -w log softmax = w * (p - onehot)
            let ce_grad = |p: &ClassVector| -> Vec<f64> {
                p.values()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let target = if k == label { 1.0 } else { 0.0 };
                        lambda * scale * weights[label] * (v - target)
                    })
                    .collect()
            };
            model.dcg.backward_global(
                &out.global,
                &ce_grad(&prior.global),
                grad_rho.as_deref(),
                &mut dcg_grads,
            );
            model
                .dcg
                .backward_local(&out.local, &ce_grad(&prior.local), &mut dcg_grads);
        }
    }
    if update_dcg {
        dcg_opt.step(model.dcg.params_mut(), dcg_grads.params());
    }
    if joint {
        den_opt.step(model.denoiser.params_mut(), den_grads.params());
    }
    Ok(())
}
