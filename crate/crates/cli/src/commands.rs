use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use diffclass::checkpoint;
use diffclass::data::{
    intersect_classes, load_manifest, remap_classes, split_sixths, synth_toy_dataset,
    AdapterConfig, ClassMapping, DatasetManifest, ImageSource, InMemoryImages, OnDiskImages,
    PreprocessConfig, SchemaConfig, SixWaySplit, Subset, ToyConfig, VocabularyConfig, TEST_PART,
};
use diffclass::experiment::{evaluate_models, train_fold, EvalConfig};
use diffclass::metrics::EvalReport;
use diffclass::model::{DiffusionClassifier, ModelConfig};
use diffclass::sampler::PredictionTable;
use diffclass::trainer::EpochRecord;
use diffclass::{Error, Result};
use serde::Serialize;

use crate::settings::{Settings, SplitSettings};

/// Above this many bytes of preprocessed pixels, images are decoded per use.
const IN_MEMORY_LIMIT: usize = 1 << 30;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// `--out` or `runs/<timestamp>-seed<seed>`.
pub fn run_dir(out: Option<&Path>, seed: u64) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            PathBuf::from("runs").join(format!("{stamp}-seed{seed}"))
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    arguments: Vec<String>,
    version: &'static str,
    created: String,
    settings: Option<&'a Settings>,
    /// Resolved architecture, including crop and latent sizes.
    model: Option<&'a ModelConfig>,
    datasets: BTreeMap<String, DatasetInfo>,
    checkpoints: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct DatasetInfo {
    checksum: String,
    records: usize,
    classes: Vec<String>,
    class_counts: Vec<usize>,
}

impl DatasetInfo {
    fn of(m: &DatasetManifest) -> Self {
        Self {
            checksum: m.checksum(),
            records: m.len(),
            classes: m.vocabulary().to_vec(),
            class_counts: m.class_counts(),
        }
    }
}

fn write_metadata(
    dir: &Path,
    command: &str,
    settings: Option<&Settings>,
    model: Option<&ModelConfig>,
    datasets: BTreeMap<String, DatasetInfo>,
    checkpoints: BTreeMap<String, String>,
) -> Result<()> {
    let meta = Metadata {
        command,
        arguments: std::env::args().skip(1).collect(),
        version: env!("CARGO_PKG_VERSION"),
        created: chrono::Local::now().to_rfc3339(),
        settings,
        model,
        datasets,
        checkpoints,
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_file(&dir.join("metadata.json"), text)?;
    if let Some(s) = settings {
        write_file(&dir.join("config.toml"), s.to_toml())?;
    }
    Ok(())
}

fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// `key=value` tokens of `prepare --toy`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub config: ToyConfig,
    pub out: Option<PathBuf>,
}

impl ToySpec {
    pub fn parse(tokens: &[String]) -> Result<Self> {
        let mut config = ToyConfig::new(3, 200, 32, 0);
        let mut out = None;
        for token in tokens {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("expected key=value, got `{token}`"))
            })?;
            let bad = || Error::InvalidArgument(format!("bad value for `{key}`: `{value}`"));
            match key {
                "C" | "classes" => config.classes = value.parse().map_err(|_| bad())?,
                "n" | "per_class" => config.per_class = value.parse().map_err(|_| bad())?,
                "size" => config.size = value.parse().map_err(|_| bad())?,
                "seed" => config.seed = value.parse().map_err(|_| bad())?,
                "noise" => config.noise = value.parse().map_err(|_| bad())?,
                "out" => out = Some(PathBuf::from(value)),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown toy key `{key}` (expected C, n, size, seed, noise, out)"
                    )))
                }
            }
        }
        Ok(Self { config, out })
    }
}

pub struct PrepareArgs {
    pub toy: Option<ToySpec>,
    pub adapter: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: SplitSettings,
    pub split_seed_given: bool,
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    let (manifest, out, source) = match (&args.toy, &args.adapter) {
        (Some(toy), None) => {
            let out = toy
                .out
                .clone()
                .or_else(|| args.out.clone())
                .ok_or_else(|| {
                    Error::InvalidArgument("toy data needs out=<dir> or --out".into())
                })?;
            let m = synth_toy_dataset(&toy.config, &out)?;
            (m, out, format!("toy {:?}", toy.config))
        }
        (None, Some(cfg_path)) => {
            let text = fs::read_to_string(cfg_path).map_err(io_err(cfg_path))?;
            let base = cfg_path.parent().unwrap_or(Path::new("."));
            let adapter = AdapterConfig::from_toml_str(&text)?.resolve_paths(base);
            let m = adapter.load()?;
            let root =
                fs::canonicalize(&adapter.image_root).map_err(io_err(&adapter.image_root))?;
            let out = args
                .out
                .clone()
                .ok_or_else(|| Error::InvalidArgument("--adapter needs --out <dir>".into()))?;
            // store absolute image paths so the manifest can live anywhere
            let records = m
                .records()
                .iter()
                .map(|r| diffclass::data::Record {
                    path: root.join(&r.path).to_string_lossy().into_owned(),
                    ..r.clone()
                })
                .collect();
            let m = DatasetManifest::new(records, m.vocabulary().to_vec(), &out)?;
            (m, out, format!("adapter {}", cfg_path.display()))
        }
        _ => {
            return Err(Error::InvalidArgument(
                "prepare needs exactly one of --toy or --adapter".into(),
            ))
        }
    };
    create_dir(&out)?;
    let seed = match (&args.toy, args.split_seed_given) {
        (Some(t), false) => t.config.seed,
        _ => args.split.seed,
    };
    let (manifest, split) = split_sixths(&manifest, seed, args.split.options())?;
    let path = out.join("manifest.csv");
    manifest.save(&path)?;
    println!(
        "{source}: {} records, classes {:?}",
        manifest.len(),
        manifest.vocabulary()
    );
    println!("class counts {:?}", manifest.class_counts());
    let sizes: Vec<usize> = split.parts.iter().map(Vec::len).collect();
    println!("part sizes {sizes:?} (part {TEST_PART} is the test set)");
    for w in &split.warnings {
        println!("warning: {w}");
    }
    println!("wrote {}", path.display());
    let mut datasets = BTreeMap::new();
    datasets.insert("manifest".to_string(), DatasetInfo::of(&manifest));
    write_metadata(&out, "prepare", None, None, datasets, BTreeMap::new())
}

/// Loads a canonical manifest; images resolve against `image_root` or the
/// manifest's directory.
pub fn open_manifest(path: &Path, image_root: Option<&Path>) -> Result<DatasetManifest> {
    let root = match image_root {
        Some(r) => r.to_path_buf(),
        None => path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf(),
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut schema = SchemaConfig::default();
    let has_group = text
        .lines()
        .next()
        .is_some_and(|h| h.split(',').any(|c| c.trim() == "group"));
    if has_group {
        schema.group_column = Some("group".into());
    }
    load_manifest(path, &root, &schema)
}

fn load_images(
    manifest: &DatasetManifest,
    pre: &PreprocessConfig,
    lenient: bool,
) -> Result<Box<dyn ImageSource>> {
    let bytes = manifest.len() * pre.size * pre.size * 3 * 8;
    if bytes > IN_MEMORY_LIMIT {
        log::info!("decoding {} images on demand", manifest.len());
        Ok(Box::new(OnDiskImages::new(manifest.clone(), pre.clone())))
    } else {
        log::info!("decoding {} images", manifest.len());
        if !lenient {
            return Ok(Box::new(InMemoryImages::load(manifest, pre)?));
        }
        let images = InMemoryImages::load_lenient(manifest, pre);
        if images.unreadable() > 0 {
            log::warn!("{} images could not be decoded", images.unreadable());
        }
        Ok(Box::new(images))
    }
}

fn split_of(
    manifest: &DatasetManifest,
    settings: &Settings,
) -> Result<(DatasetManifest, SixWaySplit)> {
    split_sixths(manifest, settings.split.seed, settings.split.options())
}

struct EpochLog {
    file: BufWriter<File>,
    path: PathBuf,
}

impl EpochLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self {
            file: BufWriter::new(file),
            path,
        })
    }

    fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.file, "{}", r.to_json_line())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub image_root: Option<PathBuf>,
    pub fold: usize,
    pub out: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

pub fn train(args: TrainArgs, settings: Settings) -> Result<()> {
    if args.fold >= TEST_PART {
        return Err(Error::InvalidArgument(format!(
            "fold {} out of range; folds are 0..={}",
            args.fold,
            TEST_PART - 1
        )));
    }
    let manifest = open_manifest(&args.manifest, args.image_root.as_deref())?;
    let (manifest, split) = split_of(&manifest, &settings)?;
    let model_config = settings.model_config(manifest.vocabulary().to_vec())?;
    let out = run_dir(args.out.as_deref(), settings.train.seed);
    create_dir(&out)?;
    let mut datasets = BTreeMap::new();
    datasets.insert("manifest".to_string(), DatasetInfo::of(&manifest));
    write_metadata(
        &out,
        "train",
        Some(&settings),
        Some(&model_config),
        datasets,
        BTreeMap::new(),
    )?;

    let images = load_images(&manifest, &model_config.preprocess, false)?;
    let mut log = EpochLog::create(out.join("epochs.jsonl"))?;
    let every = args.checkpoint_every.filter(|k| *k > 0);
    let fold = train_fold(
        &manifest,
        &split,
        images.as_ref(),
        args.fold,
        &model_config,
        &settings.train,
        |record, model| {
            log.append(record)?;
            if let Some(k) = every {
                if record.epoch % k == 0 {
                    checkpoint::save(
                        model,
                        &out.join(format!("model_epoch{}.ckpt", record.epoch)),
                    )?;
                }
            }
            Ok(())
        },
    )?;
    let ckpt = out.join("model.ckpt");
    checkpoint::save(&fold.model, &ckpt)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn write_predictions(path: &Path, table: &PredictionTable) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    table.write_csv(BufWriter::new(file))
}

fn write_outputs(
    out: &Path,
    report: &EvalReport,
    names: &[String],
    tables: &[PredictionTable],
) -> Result<()> {
    report.write(out)?;
    for (name, table) in names.iter().zip(tables) {
        write_predictions(&out.join(format!("predictions_{name}.csv")), table)?;
    }
    print!("{}", report.summary());
    let failures: Vec<_> = tables.iter().flat_map(|t| &t.failures).collect();
    if !failures.is_empty() {
        let mut text = String::from("image_id,message\n");
        for f in &failures {
            text.push_str(&format!(
                "{},\"{}\"\n",
                f.image_id,
                f.message.replace('"', "'")
            ));
        }
        write_file(&out.join("failures.csv"), text)?;
        return Err(Error::Integrity(format!(
            "{} image evaluations failed; see failures.csv",
            failures.len()
        )));
    }
    Ok(())
}

pub struct CrossvalArgs {
    pub manifest: PathBuf,
    pub image_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn crossval(args: CrossvalArgs, settings: Settings) -> Result<()> {
    let manifest = open_manifest(&args.manifest, args.image_root.as_deref())?;
    let (manifest, split) = split_of(&manifest, &settings)?;
    let model_config = settings.model_config(manifest.vocabulary().to_vec())?;
    let out = run_dir(args.out.as_deref(), settings.train.seed);
    create_dir(&out)?;
    let mut datasets = BTreeMap::new();
    datasets.insert("manifest".to_string(), DatasetInfo::of(&manifest));
    datasets.insert(
        "test".to_string(),
        DatasetInfo::of(&manifest.subset(split.test())),
    );
    write_metadata(
        &out,
        "crossval",
        Some(&settings),
        Some(&model_config),
        datasets,
        BTreeMap::new(),
    )?;

    let images = load_images(&manifest, &model_config.preprocess, false)?;
    let mut models = Vec::with_capacity(TEST_PART);
    for fold in 0..TEST_PART {
        let mut log = EpochLog::create(out.join(format!("epochs_fold{fold}.jsonl")))?;
        let trained = train_fold(
            &manifest,
            &split,
            images.as_ref(),
            fold,
            &model_config,
            &settings.train,
            |r, _| log.append(r),
        )?;
        checkpoint::save(&trained.model, &out.join(format!("fold{fold}.ckpt")))?;
        models.push(trained.model);
    }
    let test = manifest.subset(split.test());
    let test_images = Subset::new(images.as_ref(), split.test().to_vec());
    let names: Vec<String> = (0..TEST_PART).map(|f| format!("fold{f}")).collect();
    let named: Vec<(String, &DiffusionClassifier)> = names.iter().cloned().zip(&models).collect();
    let (report, tables) = evaluate_models(&test, &test_images, &named, &settings.eval)?;
    write_outputs(&out, &report, &names, &tables)
}

pub struct EvalArgs {
    pub manifest: PathBuf,
    pub image_root: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub remap: Option<PathBuf>,
    pub intersect: Option<PathBuf>,
    pub test_only: bool,
    pub out: Option<PathBuf>,
}

pub fn evaluate(args: EvalArgs, settings: Settings) -> Result<()> {
    let mut manifest = open_manifest(&args.manifest, args.image_root.as_deref())?;
    if let Some(p) = &args.intersect {
        let vocab = VocabularyConfig::from_toml_str(&fs::read_to_string(p).map_err(io_err(p))?)?;
        let kept = intersect_classes(&manifest, &vocab.classes)?;
        println!(
            "intersection kept {} records, dropped {}",
            kept.manifest.len(),
            kept.dropped
        );
        manifest = kept.manifest;
    }
    if let Some(p) = &args.remap {
        let mapping = ClassMapping::from_toml_str(&fs::read_to_string(p).map_err(io_err(p))?)?;
        manifest = remap_classes(&manifest, &mapping)?;
    }
    if args.test_only {
        manifest = manifest.with_folds(&[TEST_PART as u8]);
        if manifest.is_empty() {
            return Err(Error::InvalidState(
                "manifest has no test-part records".into(),
            ));
        }
    }
    let mut models = Vec::with_capacity(args.checkpoints.len());
    let mut digests = BTreeMap::new();
    for p in &args.checkpoints {
        models.push(checkpoint::load(p)?);
        digests.insert(p.display().to_string(), file_digest(p)?);
    }
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one --checkpoint is required".into()))?;
    for m in &models[1..] {
        if m.config != first.config {
            return Err(Error::InvalidArgument(
                "checkpoints differ in architecture or classes".into(),
            ));
        }
    }
    let manifest = manifest.reorder_vocabulary(first.classes())?;
    let out = run_dir(args.out.as_deref(), settings.eval.run.seed);
    create_dir(&out)?;
    let mut datasets = BTreeMap::new();
    datasets.insert("evaluated".to_string(), DatasetInfo::of(&manifest));
    write_metadata(
        &out,
        "eval",
        Some(&settings),
        Some(&first.config),
        datasets,
        digests,
    )?;

    let images = load_images(
        &manifest,
        &first.config.preprocess,
        !settings.eval.run.fail_fast,
    )?;
    let names: Vec<String> = args
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            format!("{i}_{stem}")
        })
        .collect();
    let named: Vec<(String, &DiffusionClassifier)> = names.iter().cloned().zip(&models).collect();
    let eval: &EvalConfig = &settings.eval;
    let (report, tables) = evaluate_models(&manifest, images.as_ref(), &named, eval)?;
    write_outputs(&out, &report, &names, &tables)
}
