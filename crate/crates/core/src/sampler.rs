//! Inference: denoise from Gaussian noise to a class-probability vector.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetManifest, ImageSource};
use crate::denoiser::DenoiserInput;
use crate::diffusion::{reverse_step_to, step_sequence, ClassVector};
use crate::error::{Error, Result};
use crate::model::DiffusionClassifier;
use crate::Image;

/// Where the chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// `y_T ~ N(0, I)`.
    #[default]
    Standard,
    /// `y_T ~ N(y_hat, I)`, the terminal marginal of the forward process.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Length of the strided step subsequence; values above `T` use every step.
    pub steps: usize,
    pub seed: u64,
    /// Chains per image; their probabilities are averaged.
    pub chains: usize,
    /// Divides the final estimate before the softmax.
    pub temperature: f64,
    pub init: ChainInit,
    /// Stop at the first unreadable image instead of recording it.
    pub fail_fast: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 0,
            chains: 1,
            temperature: 1.0,
            init: ChainInit::Standard,
            fail_fast: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampling needs at least one step"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("sampling needs at least one chain"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub probs: ClassVector,
    pub predicted: usize,
    /// Final clean-vector estimate of each chain.
    pub estimates: Vec<Vec<f64>>,
}

/// Per-image seed: the first 8 bytes of `SHA-256(run_seed_le || image_id)`.
pub fn derive_seed(run_seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Classifies one preprocessed image with chain randomness from `seed`.
pub fn classify(
    image: &Image,
    model: &DiffusionClassifier,
    config: &RunConfig,
    seed: u64,
) -> Result<Classification> {
    config.validate()?;
    let c = model.class_count();
    let schedule = &model.schedule;
    let total = schedule.steps();
    let sequence = step_sequence(total, config.steps.min(total))?;
    let guidance = model.dcg.forward(image)?;
    let prior = guidance.prior.clone();
    let shift = prior.mean();
    let rho = guidance.feature().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = vec![0.0; c];
    let mut estimates = Vec::with_capacity(config.chains);
    for _ in 0..config.chains {
        let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..c).map(|_| rng.sample(StandardNormal)).collect()
        };
        let start = noise(&mut rng);
        let start = match config.init {
            ChainInit::Standard => start,
            ChainInit::Prior => start
                .iter()
                .zip(shift.values())
                .map(|(z, p)| z + p)
                .collect(),
        };
        let mut y = ClassVector::raw(start)?;
        for (i, &t) in sequence.iter().enumerate() {
            let s = sequence.get(i + 1).copied().unwrap_or(0);
            let input = DenoiserInput {
                rho: rho.clone(),
                y_t: y,
                prior: prior.clone(),
                t,
            };
            let eps_hat = model.denoiser.estimate_noise(&input)?;
            let z = if s == 0 {
                vec![0.0; c]
            } else {
                noise(&mut rng)
            };
            y = reverse_step_to(&input.y_t, &eps_hat, &shift, t, s, &z, schedule)?;
            if y.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(format!(
                    "non-finite chain value at step {t}"
                )));
            }
        }
        let scaled: Vec<f64> = y.values().iter().map(|v| v / config.temperature).collect();
        let p = ClassVector::softmax(&scaled)?;
        for (a, b) in probs.iter_mut().zip(p.values()) {
            *a += b / config.chains as f64;
        }
        estimates.push(y.into_values());
    }
    let probs = ClassVector::distribution(probs)?;
    Ok(Classification {
        predicted: probs.argmax(),
        probs,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub truth: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub image_id: String,
    pub message: String,
}

/// Per-image predictions in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub classes: Vec<String>,
    pub rows: Vec<PredictionRow>,
    pub failures: Vec<RecordFailure>,
}

impl PredictionTable {
    pub fn truths(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.truth).collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.predicted).collect()
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.probs.clone()).collect()
    }

    /// `image_id,true_label,predicted_label,prob_<class>...` with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "image_id".to_string(),
            "true_label".to_string(),
            "predicted_label".to_string(),
        ];
        header.extend(self.classes.iter().map(|c| format!("prob_{c}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.image_id.clone(),
                self.classes[r.truth].clone(),
                self.classes[r.predicted].clone(),
            ];
            // Debug keeps round-trip precision but switches to exponents for tiny values
            rec.extend(r.probs.iter().map(|p| format!("{p:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Malformed {
            what: "prediction table",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    /// Parses the format of [`PredictionTable::write_csv`]. Failures are not
    /// part of the file and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let bad = |reason: String| Error::Malformed {
            what: "prediction table",
            reason,
        };
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let fixed = ["image_id", "true_label", "predicted_label"];
        if header.len() < fixed.len() + 2 || header.iter().take(3).ne(fixed.iter().copied()) {
            return Err(bad("header must start with image_id,true_label,predicted_label and list at least two classes".into()));
        }
        let classes: Vec<String> = header
            .iter()
            .skip(3)
            .map(|h| {
                h.strip_prefix("prob_")
                    .map(str::to_string)
                    .ok_or_else(|| bad(format!("column `{h}` lacks the prob_ prefix")))
            })
            .collect::<Result<_>>()?;
        let index = |label: &str| {
            classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| bad(format!("unknown label `{label}`")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(bad(format!(
                    "row has {} fields, header {}",
                    rec.len(),
                    header.len()
                )));
            }
            let probs = rec
                .iter()
                .skip(3)
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|p| p.is_finite())
                        .ok_or_else(|| bad(format!("bad probability `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(PredictionRow {
                image_id: rec[0].to_string(),
                truth: index(&rec[1])?,
                predicted: index(&rec[2])?,
                probs,
            });
        }
        Ok(Self {
            classes,
            rows,
            failures: Vec::new(),
        })
    }
}

/// Fails unless `manifest`'s vocabulary equals the model's, in order.
pub fn check_vocabulary(model: &DiffusionClassifier, manifest: &DatasetManifest) -> Result<()> {
    if model.classes() != manifest.vocabulary() {
        return Err(Error::VocabularyMismatch {
            expected: model.classes().join(", "),
            found: manifest.vocabulary().join(", "),
        });
    }
    Ok(())
}

/// Classifies every record of `manifest` (images by the same index).
pub fn batch_evaluate<S: ImageSource + ?Sized>(
    manifest: &DatasetManifest,
    images: &S,
    model: &DiffusionClassifier,
    config: &RunConfig,
) -> Result<PredictionTable> {
    config.validate()?;
    check_vocabulary(model, manifest)?;
    if images.len() != manifest.len() {
        return Err(Error::invalid(format!(
            "{} images for {} records",
            images.len(),
            manifest.len()
        )));
    }
    let labels = manifest.label_indices();
    let mut rows = Vec::with_capacity(manifest.len());
    let mut failures = Vec::new();
    for (i, record) in manifest.records().iter().enumerate() {
        let image = match images.image(i) {
            Ok(img) => img,
            Err(e) if !config.fail_fast && matches!(e, Error::Image { .. } | Error::Io { .. }) => {
                log::error!("{e}");
                failures.push(RecordFailure {
                    image_id: record.image_id.clone(),
                    message: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let seed = derive_seed(config.seed, &record.image_id);
        let out = classify(&image, model, config, seed)?;
        rows.push(PredictionRow {
            image_id: record.image_id.clone(),
            truth: labels[i],
            predicted: out.predicted,
            probs: out.probs.into_values(),
        });
    }
    Ok(PredictionTable {
        classes: model.classes().to_vec(),
        rows,
        failures,
    })
}
