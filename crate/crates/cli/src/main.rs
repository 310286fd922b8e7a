//! Command-line front end: data preparation, training, cross-validation
//! and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use diffclass_cli::commands::{self, CrossvalArgs, EvalArgs, PrepareArgs, ToySpec, TrainArgs};
use diffclass_cli::settings::{Overrides, SplitSettings};

#[derive(Debug, Parser)]
#[command(
    name = "diffclass",
    version,
    about = "Diffusion-based image classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a canonical manifest with split folds from a dataset or toy data.
    Prepare {
        /// Synthesize toy data from key=value tokens: C= n= size= seed= out= [noise=].
        #[arg(long, num_args = 1.., value_name = "KEY=VALUE", conflicts_with = "adapter")]
        toy: Option<Vec<String>>,
        /// Adapter TOML describing a dataset's metadata file.
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
        /// Assign folds ignoring class labels.
        #[arg(long)]
        no_stratify: bool,
        /// Keep records sharing a group key in one part.
        #[arg(long)]
        group_by: bool,
    },
    /// Train one fold model (the other four folds are the training set).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also save a checkpoint every k epochs.
        #[arg(long, value_name = "K")]
        checkpoint_every: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train all five fold models and score each on the test part.
    Crossval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score saved models on a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        image_root: Option<PathBuf>,
        /// Class mapping TOML applied to the data labels.
        #[arg(long)]
        remap: Option<PathBuf>,
        /// Vocabulary TOML; records outside it are dropped.
        #[arg(long)]
        intersect: Option<PathBuf>,
        /// Only records of the test part.
        #[arg(long)]
        test_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> diffclass::Result<()> {
    match cli.command {
        Command::Prepare {
            toy,
            adapter,
            out,
            split_seed,
            no_stratify,
            group_by,
        } => {
            let toy = toy.map(|t| ToySpec::parse(&t)).transpose()?;
            commands::prepare(PrepareArgs {
                toy,
                adapter,
                out,
                split: SplitSettings {
                    seed: split_seed.unwrap_or(0),
                    stratify: !no_stratify,
                    group_by,
                },
                split_seed_given: split_seed.is_some(),
            })
        }
        Command::Train {
            manifest,
            fold,
            image_root,
            out,
            checkpoint_every,
            overrides,
        } => commands::train(
            TrainArgs {
                manifest,
                image_root,
                fold,
                out,
                checkpoint_every,
            },
            overrides.resolve()?,
        ),
        Command::Crossval {
            manifest,
            image_root,
            out,
            overrides,
        } => commands::crossval(
            CrossvalArgs {
                manifest,
                image_root,
                out,
            },
            overrides.resolve()?,
        ),
        Command::Eval {
            manifest,
            checkpoints,
            image_root,
            remap,
            intersect,
            test_only,
            out,
            overrides,
        } => commands::evaluate(
            EvalArgs {
                manifest,
                image_root,
                checkpoints,
                remap,
                intersect,
                test_only,
                out,
            },
            overrides.resolve()?,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
