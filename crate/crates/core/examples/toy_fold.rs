//! Trains one fold on a generated toy set and prints test metrics.
//!
//! `cargo run --release -p diffclass --example toy_fold -- [epochs] [steps]`

use std::time::Instant;

use diffclass::data::{
    split_sixths, synth_toy_dataset, InMemoryImages, SplitOptions, Subset, ToyConfig,
};
use diffclass::experiment::{evaluate_models, train_fold, EvalConfig};
use diffclass::model::ModelConfig;
use diffclass::trainer::TrainConfig;

fn main() -> diffclass::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let epochs = args.first().copied().unwrap_or(20);
    let steps = args.get(1).copied().unwrap_or(25);
    let dir = std::env::temp_dir().join("diffclass-toy-fold");
    let manifest = synth_toy_dataset(&ToyConfig::new(3, 200, 32, 7), &dir)?;
    let (manifest, split) = split_sixths(
        &manifest,
        7,
        SplitOptions {
            stratify: true,
            group_by: false,
        },
    )?;
    let config = ModelConfig::desk(manifest.vocabulary().to_vec());
    let images = InMemoryImages::load(&manifest, &config.preprocess)?;
    let train = TrainConfig {
        epochs,
        seed: 1,
        ..Default::default()
    };
    let start = Instant::now();
    let fold = train_fold(&manifest, &split, &images, 0, &config, &train, |r, _| {
        println!(
            "epoch {:>3} total {:.4} diffusion {:.4} wce {:.4}/{:.4} ({:.1}s)",
            r.epoch, r.total, r.diffusion, r.wce_global, r.wce_local, r.wall_seconds
        );
        Ok(())
    })?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    let test = manifest.subset(split.test());
    let test_images = Subset::new(&images, split.test().to_vec());
    let mut eval = EvalConfig::default();
    eval.run.steps = steps;
    let start = Instant::now();
    let (report, _) =
        evaluate_models(&test, &test_images, &[("fold0".into(), &fold.model)], &eval)?;
    println!("evaluated in {:.1}s", start.elapsed().as_secs_f64());
    print!("{}", report.summary());
    println!("{:?}", report.pooled_row_normalized);
    Ok(())
}
