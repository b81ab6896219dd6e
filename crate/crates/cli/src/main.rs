use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use extubate::commands::{self, Context, EnsembleMode};
use extubate::{CliError, Family, Overrides};

#[derive(Parser)]
#[command(name = "extubate", version, about = "Extubation-failure prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for parallel retraining (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Build sequence bundles, baseline tables and the split from a cohort.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Cohort directory written by `generate`.
        #[arg(long)]
        cohort: PathBuf,
        /// Feature set 1, 2 or 3 (overrides the config).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        feature_set: Option<u8>,
        /// Observation-frequency threshold (default 0.5, or 0.15 for set 3).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train one model on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Preprocessed data directory written by `preprocess`.
        #[arg(long)]
        bundle: PathBuf,
        /// Model family.
        #[arg(long, value_enum)]
        family: Family,
        /// Feed the encoded static features to the model.
        #[arg(long = "static")]
        use_static: bool,
    },
    /// Cross-validated hyperparameter search.
    Search {
        #[command(flatten)]
        common: Common,
        /// Preprocessed data directory written by `preprocess`.
        #[arg(long)]
        bundle: PathBuf,
        /// Model family.
        #[arg(long, value_enum)]
        family: Family,
        /// Feed the encoded static features to the model.
        #[arg(long = "static")]
        use_static: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preprocessed data directory written by `preprocess`.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Drop-one-feature retraining with the checkpoint's configuration.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preprocessed data directory written by `preprocess`.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Combine several checkpoints by averaging or stacking.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory; repeat for each base model.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// How to combine the base models.
        #[arg(long, value_enum)]
        mode: EnsembleMode,
        /// Preprocessed data directory written by `preprocess`.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// generate → preprocess → train → evaluate in one go.
    Run {
        #[command(flatten)]
        common: Common,
        /// Feature set 1, 2 or 3 (overrides the config).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        feature_set: Option<u8>,
        /// Model family; repeat to train several.
        #[arg(long = "family", value_enum, default_values = ["fused-lstm", "fused-tcn", "gbdt"])]
        families: Vec<Family>,
        /// Feed the encoded static features to the model.
        #[arg(long = "static")]
        use_static: bool,
    },
}

fn context(common: &Common, feature_set: Option<u8>, threshold: Option<f64>) -> extubate::Result<Context> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let overrides = Overrides {
        seed: common.seed,
        feature_set,
        threshold,
    };
    Context::new(common.config.as_deref(), &overrides, &common.out)
}

fn dispatch(cli: Cli) -> extubate::Result<()> {
    match cli.command {
        Command::Generate { common } => {
            commands::generate(&context(&common, None, None)?)?;
        }
        Command::Preprocess {
            common,
            cohort,
            feature_set,
            threshold,
        } => {
            commands::preprocess(&context(&common, feature_set, threshold)?, &cohort)?;
        }
        Command::Train {
            common,
            bundle,
            family,
            use_static,
        } => {
            commands::train(&context(&common, None, None)?, &bundle, family, use_static)?;
        }
        Command::Search {
            common,
            bundle,
            family,
            use_static,
        } => {
            commands::search(&context(&common, None, None)?, &bundle, family, use_static)?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            bundle,
        } => {
            commands::evaluate(&context(&common, None, None)?, &checkpoint, &bundle)?;
        }
        Command::Ablate {
            common,
            checkpoint,
            bundle,
        } => {
            commands::ablate(&context(&common, None, None)?, &checkpoint, &bundle)?;
        }
        Command::Ensemble {
            common,
            checkpoints,
            mode,
            bundle,
        } => {
            commands::ensemble(&context(&common, None, None)?, &checkpoints, mode, &bundle)?;
        }
        Command::Run {
            common,
            feature_set,
            families,
            use_static,
        } => {
            commands::run(&context(&common, feature_set, None)?, &families, use_static)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
