//! The complete classifier: guidance network, noise estimator, schedule and
//! class vocabulary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PreprocessConfig;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{Dcg, GuidanceConfig};
use crate::nn::{Param, Parameters};

/// Linear variance schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    /// Shorter schedule whose betas are scaled by `1000 / steps`, so the
    /// terminal `alpha_bar` stays of the same order as the 1000-step default
    /// (both keep under 1% of the signal amplitude).
    pub fn scaled(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        let base = Self::default();
        Self {
            steps,
            beta_start: base.beta_start * k,
            beta_end: base.beta_end * k,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub classes: Vec<String>,
    pub guidance: GuidanceConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub preprocess: PreprocessConfig,
}

impl ModelConfig {
    /// Full-size networks at 224 pixels with the 1000-step schedule.
    pub fn full(classes: Vec<String>) -> Self {
        let c = classes.len();
        let guidance = GuidanceConfig::full(c);
        let f = guidance.encoder.feature_dim();
        Self {
            classes,
            denoiser: DenoiserConfig::full(c, f),
            guidance,
            schedule: ScheduleConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }

    /// Small networks at 32 pixels with a scaled 100-step schedule.
    pub fn desk(classes: Vec<String>) -> Self {
        let c = classes.len();
        let guidance = GuidanceConfig::desk(c);
        let f = guidance.encoder.feature_dim();
        Self {
            classes,
            denoiser: DenoiserConfig::desk(c, f),
            preprocess: PreprocessConfig::with_size(guidance.image_size),
            guidance,
            schedule: ScheduleConfig::scaled(100),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        if self.guidance.classes != c || self.denoiser.classes != c {
            return Err(Error::invalid(format!(
                "class count disagrees: vocabulary {c}, guidance {}, denoiser {}",
                self.guidance.classes, self.denoiser.classes
            )));
        }
        if self.denoiser.feature_dim != self.guidance.encoder.feature_dim() {
            return Err(Error::invalid(
                "denoiser feature_dim must equal the guidance encoder's feature width",
            ));
        }
        if self.preprocess.size != self.guidance.image_size {
            return Err(Error::invalid(format!(
                "preprocess size {} differs from guidance image size {}",
                self.preprocess.size, self.guidance.image_size
            )));
        }
        self.guidance.validate()?;
        self.denoiser.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    /// Trainable values of the whole model, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<u64> {
        self.guidance
            .parameter_count()?
            .checked_add(self.denoiser.parameter_count()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionClassifier {
    pub config: ModelConfig,
    pub dcg: Dcg,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

impl DiffusionClassifier {
    /// Freshly initialized weights; deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dcg = Dcg::new(&config.guidance, &mut rng)?;
        let denoiser = Denoiser::new(&config.denoiser, &mut rng)?;
        let schedule = config.schedule.build()?;
        Ok(Self {
            config,
            dcg,
            denoiser,
            schedule,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.config.classes
    }

    pub fn class_count(&self) -> usize {
        self.config.classes.len()
    }
}

impl Parameters for DiffusionClassifier {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.dcg.collect(out);
        self.denoiser.collect(out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.dcg.collect_mut(out);
        self.denoiser.collect_mut(out);
    }
}
