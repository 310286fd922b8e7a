//! Manifests shaped like the real datasets (class lists and per-part counts)
//! pushed through loading, splitting, remapping, intersection and weighting.

use diffclass::data::{
    intersect_classes, preprocess_image, remap_classes, split_sixths, ClassMapping,
    DatasetManifest, InMemoryImages, PreprocessConfig, SchemaConfig, SplitOptions, TEST_PART,
};
use diffclass::model::{DiffusionClassifier, ModelConfig, ScheduleConfig};
use diffclass::nn::StageConfig;
use diffclass::sampler::{batch_evaluate, RunConfig};
use diffclass::trainer::class_weights;
use image::{DynamicImage, RgbImage};
use ndarray::Array3;

const PAD_CLASSES: [&str; 6] = ["ACK", "BCC", "MEL", "NEV", "SCC", "SEK"];
const PAD_TRAIN: [usize; 6] = [608, 704, 44, 204, 160, 196];
const PAD_TEST: [usize; 6] = [122, 141, 9, 40, 32, 39];

/// CSV with `train[c]` records spread over folds 0..=4 and `test[c]` in fold 5.
fn csv_with_folds(classes: &[&str], train: &[usize], test: &[usize]) -> String {
    let mut out = String::from("image_id,path,label,fold\n");
    for (c, label) in classes.iter().enumerate() {
        for i in 0..train[c] {
            out.push_str(&format!("{label}_{i},{label}_{i}.png,{label},{}\n", i % 5));
        }
        for i in 0..test[c] {
            out.push_str(&format!(
                "{label}_t{i},{label}_t{i}.png,{label},{TEST_PART}\n"
            ));
        }
    }
    out
}

fn pad_manifest() -> DatasetManifest {
    let csv = csv_with_folds(&PAD_CLASSES, &PAD_TRAIN, &PAD_TEST);
    DatasetManifest::from_csv_reader(csv.as_bytes(), "/pad".as_ref(), &SchemaConfig::default())
        .unwrap()
}

#[test]
fn pad_loads_six_labels_and_keeps_provided_folds() {
    let m = pad_manifest();
    assert_eq!(m.vocabulary(), PAD_CLASSES);
    let (m, split) = split_sixths(&m, 99, SplitOptions::default()).unwrap();
    assert_eq!(split.test().len(), 383);
    let train: usize = (0..TEST_PART).map(|f| split.fold(f).len()).sum();
    assert_eq!(train, 1916);
    assert_eq!(m.len(), 2299);
}

#[test]
fn rarest_class_gets_largest_weight() {
    let m = pad_manifest().with_folds(&[0, 1, 2, 3, 4]);
    let w = class_weights(&m).unwrap();
    let mel = PAD_CLASSES.iter().position(|c| *c == "MEL").unwrap();
    assert!((w[mel] - 1916.0 / (6.0 * 44.0)).abs() < 1e-12);
    assert!((w[mel] - 7.258).abs() < 1e-3);
    assert!(w.iter().all(|x| *x <= w[mel]));
}

#[test]
fn cancer_grouping() {
    let m = remap_classes(&pad_manifest(), &ClassMapping::cancer_binary()).unwrap();
    assert_eq!(m.vocabulary(), ["cancer", "non-cancer"]);
    let counts = m.class_counts();
    // MEL + BCC + SCC against ACK + SEK + NEV
    assert_eq!(
        counts,
        vec![
            44 + 9 + 704 + 141 + 160 + 32,
            608 + 122 + 196 + 39 + 204 + 40
        ]
    );
    let find = |id: &str| {
        m.records()
            .iter()
            .find(|r| r.image_id == id)
            .unwrap()
            .label
            .clone()
    };
    assert_eq!(find("MEL_0"), "cancer");
    assert_eq!(find("ACK_0"), "non-cancer");
}

#[test]
fn oral_patch_counts_sum_to_dataset_size() {
    let classes = ["OSCC", "with_dysplasia", "without_dysplasia"];
    let csv = csv_with_folds(&classes, &[939, 1608, 589], &[187, 322, 118]);
    let m =
        DatasetManifest::from_csv_reader(csv.as_bytes(), "/".as_ref(), &SchemaConfig::default())
            .unwrap();
    let (_, split) = split_sixths(&m, 0, SplitOptions::default()).unwrap();
    assert_eq!(m.len(), 3763);
    assert_eq!(split.test().len(), 627);
}

#[test]
fn clinical_set_intersects_to_shared_classes() {
    // ten classes, 309 records in the six shared with the training set
    let shared = [120, 80, 40, 30, 25, 14];
    let other = [("AK_other", 10), ("DF", 9), ("VASC", 9), ("LEN", 9)];
    let mut csv = String::from("image_id,path,label,fold\n");
    for (c, n) in PAD_CLASSES.iter().zip(shared) {
        for i in 0..n {
            csv.push_str(&format!("{c}{i},{c}{i}.jpg,{c},\n"));
        }
    }
    for (c, n) in other {
        for i in 0..n {
            csv.push_str(&format!("{c}{i},{c}{i}.jpg,{c},\n"));
        }
    }
    let m =
        DatasetManifest::from_csv_reader(csv.as_bytes(), "/".as_ref(), &SchemaConfig::default())
            .unwrap();
    assert_eq!(m.len(), 346);
    let allowed: Vec<String> = PAD_CLASSES.iter().map(|s| s.to_string()).collect();
    let kept = intersect_classes(&m, &allowed).unwrap();
    assert_eq!(kept.manifest.len(), 309);
    assert_eq!(kept.dropped, 37);
    assert_eq!(kept.manifest.vocabulary(), PAD_CLASSES);
}

#[test]
fn default_preprocessing_is_224_square() {
    let img = DynamicImage::ImageRgb8(RgbImage::new(640, 480));
    assert_eq!(
        preprocess_image(&img, &PreprocessConfig::default()).shape(),
        &[224, 224, 3]
    );
}

#[test]
fn test_part_gives_one_prediction_row_per_record() {
    let m = pad_manifest().with_folds(&[TEST_PART as u8]);
    let mut config = ModelConfig::desk(m.vocabulary().to_vec());
    config.guidance.image_size = 16;
    config.guidance.encoder.stem_channels = 2;
    config.guidance.encoder.stages = vec![StageConfig {
        channels: 4,
        blocks: 1,
        stride: 2,
    }];
    config.guidance.crop_size = 8;
    config.guidance.local_input_size = 8;
    config.denoiser.feature_dim = 4;
    config.denoiser.latent = 8;
    config.schedule = ScheduleConfig::scaled(50);
    config.preprocess.size = 16;
    let model = DiffusionClassifier::new(config, 3).unwrap();
    let images = InMemoryImages::from_images(vec![Array3::zeros((16, 16, 3)); m.len()]);
    let run = RunConfig {
        steps: 5,
        ..Default::default()
    };
    let table = batch_evaluate(&m, &images, &model, &run).unwrap();
    assert_eq!(table.rows.len(), 383);
    assert!(table
        .rows
        .iter()
        .zip(m.records())
        .all(|(row, rec)| row.image_id == rec.image_id));
}
