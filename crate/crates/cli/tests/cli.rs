use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffclass_cli::commands::ToySpec;
use diffclass_cli::settings::Settings;

fn diffclass(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffclass"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A 3-class toy set with folds, ready for training.
fn toy(dir: &Path) -> PathBuf {
    let o = diffclass(
        &[
            "prepare", "--toy", "C=3", "n=12", "size=16", "seed=3", "out=toy",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("toy/manifest.csv")
}

const QUICK: [&str; 8] = [
    "--preset", "desk", "--epochs", "2", "--steps", "5", "--seed", "9",
];

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&diffclass(&["--help"], dir.path())), 0);
    assert_eq!(code(&diffclass(&["--version"], dir.path())), 0);
    assert_eq!(code(&diffclass(&["train", "--help"], dir.path())), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&diffclass(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&diffclass(&["train", "--fold", "0"], dir.path())), 1);
    let o = diffclass(
        &["prepare", "--toy", "C=3", "colour=red", "out=x"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));
    let manifest = toy(dir.path());
    let o = diffclass(
        &[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--fold",
            "5",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("0..=4"));
}

#[test]
fn prepare_writes_split_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let text = fs::read_to_string(&manifest).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image_id,path,label,fold"));
    let folds: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(folds.len(), 36);
    for f in 0..6 {
        assert_eq!(folds.iter().filter(|x| **x == f.to_string()).count(), 6);
    }
    assert!(dir.path().join("toy/metadata.json").exists());
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let m = manifest.to_str().unwrap();
    let mut args = vec![
        "train",
        "--manifest",
        m,
        "--fold",
        "1",
        "--out",
        "run",
        "--checkpoint-every",
        "1",
    ];
    args.extend(QUICK);
    let o = diffclass(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in [
        "model.ckpt",
        "model_epoch1.ckpt",
        "epochs.jsonl",
        "config.toml",
        "metadata.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let config = Settings::from_file(&run.join("config.toml")).unwrap();
    assert_eq!(config.train.epochs, 2);
    assert_eq!(config.train.seed, 9);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(
        meta["datasets"]["manifest"]["checksum"]
            .as_str()
            .unwrap()
            .len(),
        64
    );

    let ckpt = run.join("model.ckpt");
    let o = diffclass(
        &[
            "eval",
            "--manifest",
            m,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--test-only",
            "--steps",
            "5",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = dir.path().join("ev");
    let preds = fs::read_to_string(ev.join("predictions_0_model.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 6);
    assert!(preds
        .starts_with("image_id,true_label,predicted_label,prob_class0,prob_class1,prob_class2"));
    for f in [
        "report.json",
        "summary.txt",
        "confusion_pooled_counts.csv",
        "confusion_pooled_normalized.csv",
    ] {
        assert!(ev.join(f).exists(), "{f} missing");
    }
}

#[test]
fn eval_reports_vocabulary_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let m = manifest.to_str().unwrap();
    let mut args = vec!["train", "--manifest", m, "--fold", "0", "--out", "run"];
    args.extend(QUICK);
    assert_eq!(code(&diffclass(&args, dir.path())), 0);
    fs::write(
        dir.path().join("binary.toml"),
        "targets = [\"first\", \"rest\"]\n[map]\nclass0 = \"first\"\nclass1 = \"rest\"\nclass2 = \"rest\"\n",
    )
    .unwrap();
    let o = diffclass(
        &[
            "eval",
            "--manifest",
            m,
            "--checkpoint",
            "run/model.ckpt",
            "--remap",
            "binary.toml",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("class0, class1, class2") && err.contains("first, rest"),
        "{err}"
    );
}

#[test]
fn crossval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let m = manifest.to_str().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["crossval", "--manifest", m, "--out", out];
        args.extend(QUICK);
        let o = diffclass(&args, dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for f in [
        "report.json",
        "summary.txt",
        "predictions_fold3.csv",
        "confusion_pooled_normalized.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    for k in 0..5 {
        assert!(a.join(format!("fold{k}.ckpt")).exists());
        assert!(a.join(format!("epochs_fold{k}.jsonl")).exists());
    }
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("mean ± std"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let m = manifest.to_str().unwrap();
    fs::write(dir.path().join("bad.ckpt"), b"DFCK garbage").unwrap();
    let o = diffclass(
        &["eval", "--manifest", m, "--checkpoint", "bad.ckpt"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    fs::write(dir.path().join("run.toml"), "[train]\nepoch = 3\n").unwrap();
    let o = diffclass(
        &[
            "train",
            "--manifest",
            m,
            "--fold",
            "0",
            "--config",
            "run.toml",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epoch"));
    let o = diffclass(
        &["train", "--manifest", "missing.csv", "--fold", "0"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn keep_going_records_unreadable_images() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy(dir.path());
    let m = manifest.to_str().unwrap();
    let mut args = vec!["train", "--manifest", m, "--fold", "0", "--out", "run"];
    args.extend(QUICK);
    assert_eq!(code(&diffclass(&args, dir.path())), 0);
    // break one test-part image after training
    let text = fs::read_to_string(&manifest).unwrap();
    let victim = text.lines().skip(1).find(|l| l.ends_with(",5")).unwrap();
    let path = victim.split(',').nth(1).unwrap();
    fs::write(dir.path().join("toy").join(path), b"not a png").unwrap();

    let base = [
        "eval",
        "--manifest",
        m,
        "--checkpoint",
        "run/model.ckpt",
        "--test-only",
        "--steps",
        "5",
    ];
    let o = diffclass(&[&base[..], &["--out", "strict"]].concat(), dir.path());
    assert_eq!(code(&o), 2);
    let o = diffclass(
        &[&base[..], &["--out", "lenient", "--keep-going"]].concat(),
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let failures = fs::read_to_string(dir.path().join("lenient/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2);
    let preds = fs::read_to_string(dir.path().join("lenient/predictions_0_model.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 5);
}

#[test]
fn prepare_from_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir_all(d.join("raw/imgs")).unwrap();
    let mut meta = String::from("patient_id,img_id,diagnostic\n");
    for (i, label) in ["ACK", "BCC", "NEV"].iter().cycle().take(18).enumerate() {
        let name = format!("PAT_{i}.png");
        image::RgbImage::new(4, 4)
            .save(d.join("raw/imgs").join(&name))
            .unwrap();
        meta.push_str(&format!("P{},{name},{label}\n", i / 2));
    }
    fs::write(d.join("raw/metadata.csv"), meta).unwrap();
    fs::write(
        d.join("raw/adapter.toml"),
        "metadata = \"metadata.csv\"\nimage_root = \"imgs\"\n\n[schema]\nid_column = \"img_id\"\npath_column = \"img_id\"\nlabel_column = \"diagnostic\"\nfold_column = \"\"\ngroup_column = \"patient_id\"\n",
    )
    .unwrap();
    let o = diffclass(
        &[
            "prepare",
            "--adapter",
            "raw/adapter.toml",
            "--out",
            "prepared",
            "--group-by",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.join("prepared/manifest.csv")).unwrap();
    assert!(text.starts_with("image_id,path,label,fold,group\n"));
    let first = text.lines().nth(1).unwrap();
    let path = first.split(',').nth(1).unwrap();
    assert!(
        Path::new(path).is_absolute() && Path::new(path).exists(),
        "{path}"
    );
}

#[test]
fn run_settings_corpus() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/run_settings");
    let mut seen = 0;
    for entry in fs::read_dir(corpus).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        seen += 1;
        if name.ends_with(".txt") {
            let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
            assert!(ToySpec::parse(&tokens).is_ok(), "{name}");
        } else if name.starts_with("unknown") {
            assert!(Settings::from_toml_str(&text).is_err(), "{name}");
        } else {
            let s = Settings::from_toml_str(&text).unwrap();
            s.model_config(vec!["a".into(), "b".into()]).unwrap();
        }
    }
    assert!(seen > 0);
}

#[test]
fn shipped_configs_parse() {
    use diffclass::data::{AdapterConfig, ClassMapping, VocabularyConfig};
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let read = |p: &str| fs::read_to_string(root.join(p)).unwrap();
    for a in ["pad_ufes_20", "p_ndb_ufes", "hiba"] {
        AdapterConfig::from_toml_str(&read(&format!("adapters/{a}.toml"))).unwrap();
    }
    let mapping = ClassMapping::from_toml_str(&read("mappings/cancer_binary.toml")).unwrap();
    let vocab = VocabularyConfig::from_toml_str(&read("vocab/pad_ufes_20.toml")).unwrap();
    assert!(vocab.classes.iter().all(|c| mapping.map.contains_key(c)));
    for r in ["desk", "full"] {
        let s = Settings::from_toml_str(&read(&format!("runs/{r}.toml"))).unwrap();
        s.model_config(vocab.classes.clone()).unwrap();
    }
}
