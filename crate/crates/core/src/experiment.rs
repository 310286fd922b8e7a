//! Cross-validation and evaluation protocols on top of the trainer and
//! sampler: one model per fold, each scored on the fixed test part.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, ImageSource, SixWaySplit, Subset, TEST_PART};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, EvalReport, ModelReport, ZeroRowPolicy};
use crate::model::{DiffusionClassifier, ModelConfig};
use crate::sampler::{batch_evaluate, derive_seed, PredictionTable, RunConfig};
use crate::trainer::{train_with, EpochRecord, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub run: RunConfig,
    pub zero_rows: ZeroRowPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            zero_rows: ZeroRowPolicy::Error,
        }
    }
}

/// Training seed for fold `fold` under a run seed; `train --fold f` and
/// cross-validation agree on it.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub fold: usize,
    pub model: DiffusionClassifier,
    pub log: Vec<EpochRecord>,
}

/// Trains on the four folds other than `fold`. `images` is indexed like the
/// manifest.
pub fn train_fold<S: ImageSource + ?Sized>(
    manifest: &DatasetManifest,
    split: &SixWaySplit,
    images: &S,
    fold: usize,
    model_config: &ModelConfig,
    train: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord, &DiffusionClassifier) -> Result<()>,
) -> Result<TrainedFold> {
    if fold >= TEST_PART {
        return Err(Error::invalid(format!(
            "fold {fold} out of range; folds are 0..={}",
            TEST_PART - 1
        )));
    }
    if model_config.classes != manifest.vocabulary() {
        return Err(Error::VocabularyMismatch {
            expected: model_config.classes.join(", "),
            found: manifest.vocabulary().join(", "),
        });
    }
    let indices = split.training(fold);
    let labels = manifest.label_indices();
    let train_labels: Vec<usize> = indices.iter().map(|i| labels[*i]).collect();
    let subset = Subset::new(images, indices);
    let seed = fold_seed(train.seed, fold);
    let mut model =
        DiffusionClassifier::new(model_config.clone(), derive_seed(seed, "model-init"))?;
    let config = TrainConfig {
        seed,
        ..train.clone()
    };
    log::info!("training fold {fold} on {} images", train_labels.len());
    let log = train_with(&config, &mut model, &subset, &train_labels, on_epoch)?;
    Ok(TrainedFold { fold, model, log })
}

/// Scores each named model on `manifest` and collects the report.
pub fn evaluate_models<S: ImageSource + ?Sized>(
    manifest: &DatasetManifest,
    images: &S,
    models: &[(String, &DiffusionClassifier)],
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<PredictionTable>)> {
    let mut reports = Vec::with_capacity(models.len());
    let mut tables = Vec::with_capacity(models.len());
    for (name, model) in models {
        let table = batch_evaluate(manifest, images, model, &config.run)?;
        let (metrics, confusion) = compute_metrics(
            &table.truths(),
            &table.predictions(),
            &table.probabilities(),
            model.class_count(),
            config.zero_rows,
        )?;
        reports.push(ModelReport {
            name: name.clone(),
            samples: table.rows.len(),
            metrics,
            confusion,
        });
        tables.push(table);
    }
    Ok((
        EvalReport::new(manifest.vocabulary().to_vec(), reports)?,
        tables,
    ))
}

pub struct CrossValidation {
    pub folds: Vec<TrainedFold>,
    pub report: EvalReport,
    pub predictions: Vec<PredictionTable>,
}

/// Trains the five fold models and scores each on the test part.
pub fn cross_validate<S: ImageSource + ?Sized>(
    manifest: &DatasetManifest,
    split: &SixWaySplit,
    images: &S,
    model_config: &ModelConfig,
    train: &TrainConfig,
    eval: &EvalConfig,
) -> Result<CrossValidation> {
    let mut folds = Vec::with_capacity(TEST_PART);
    for fold in 0..TEST_PART {
        folds.push(train_fold(
            manifest,
            split,
            images,
            fold,
            model_config,
            train,
            |_, _| Ok(()),
        )?);
    }
    let test_manifest = manifest.subset(split.test());
    let test_images = Subset::new(images, split.test().to_vec());
    let named: Vec<(String, &DiffusionClassifier)> = folds
        .iter()
        .map(|f| (format!("fold{}", f.fold), &f.model))
        .collect();
    let (report, predictions) = evaluate_models(&test_manifest, &test_images, &named, eval)?;
    Ok(CrossValidation {
        folds,
        report,
        predictions,
    })
}
