//! Replays the checked-in fuzz corpus through the same entry points as the
//! fuzz targets, so every seed runs under plain `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};

use diffclass::checkpoint;
use diffclass::data::{
    preprocess_image, AdapterConfig, ClassMapping, DatasetManifest, PreprocessConfig, SchemaConfig,
    VocabularyConfig,
};
use diffclass::sampler::PredictionTable;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn manifest_seeds() {
    let schema = SchemaConfig::default();
    for (name, data) in corpus("manifest_csv") {
        let parsed = DatasetManifest::from_csv_reader(&data[..], Path::new("/data"), &schema);
        match name.as_str() {
            "canonical.csv" | "grouped.csv" | "quoted.csv" => {
                let m = parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
                let mut buf = Vec::new();
                m.write_csv(&mut buf).unwrap();
                let back = DatasetManifest::from_csv_reader(&buf[..], Path::new("/data"), &schema)
                    .unwrap();
                assert_eq!(back.records(), m.records(), "{name}");
            }
            _ => assert!(parsed.is_err(), "{name} should be rejected"),
        }
    }
}

#[test]
fn data_config_seeds() {
    for (name, data) in corpus("data_config_toml") {
        let text = String::from_utf8(data).unwrap();
        let adapter = AdapterConfig::from_toml_str(&text);
        let mapping = ClassMapping::from_toml_str(&text);
        let vocab = VocabularyConfig::from_toml_str(&text);
        match name.as_str() {
            n if n.starts_with("adapter") => assert!(adapter.is_ok(), "{name}: {adapter:?}"),
            "mapping.toml" => assert_eq!(mapping.unwrap(), ClassMapping::cancer_binary()),
            "vocab.toml" => assert_eq!(vocab.unwrap().classes.len(), 6),
            _ => assert!(
                adapter.is_err() && mapping.is_err() && vocab.is_err(),
                "{name}"
            ),
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, data) in corpus("checkpoint_decode") {
        let decoded = checkpoint::decode(&data);
        if name == "tiny.ckpt" {
            let model = decoded.unwrap();
            let again = checkpoint::encode(&model).unwrap();
            assert_eq!(again, data);
        } else {
            assert!(decoded.is_err(), "{name} should be rejected");
        }
    }
}

#[test]
fn prediction_table_seeds() {
    for (name, data) in corpus("predictions_csv") {
        let parsed = PredictionTable::read_csv(&data[..]);
        match name.as_str() {
            "table.csv" => {
                let t = parsed.unwrap();
                assert_eq!(t.rows.len(), 3);
                let mut buf = Vec::new();
                t.write_csv(&mut buf).unwrap();
                assert_eq!(PredictionTable::read_csv(&buf[..]).unwrap(), t);
            }
            "header_only.csv" => assert!(parsed.unwrap().rows.is_empty()),
            _ => assert!(parsed.is_err(), "{name} should be rejected"),
        }
    }
}

#[test]
fn image_seeds() {
    let cfg = PreprocessConfig::with_size(16);
    for (name, data) in corpus("image_decode") {
        let decoded = image::load_from_memory(&data);
        if name.starts_with("truncated") {
            assert!(decoded.is_err(), "{name}");
            continue;
        }
        let out = preprocess_image(&decoded.unwrap(), &cfg);
        assert_eq!(out.shape(), &[16, 16, 3], "{name}");
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
