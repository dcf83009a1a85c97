//! `gdml` — manifest-driven pipeline runner: prepare a patch store, train
//! teacher/student/baseline models, run k-NN evaluation sweeps, fuse the
//! two views, and render plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use guided_dml::commands::{
    cmd_eval, cmd_fuse, cmd_plot, cmd_prepare, cmd_train, TrainTarget,
};
use guided_dml::fusion::FusionStrategy;
use guided_dml::manifest::ExperimentManifest;
use guided_dml::training::MAX_EPOCHS;
use guided_dml::Error;

#[derive(Parser)]
#[command(name = "gdml", version, about = "Guided deep-metric-learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the corresponding
/// manifest field when given.
#[derive(Args)]
struct Common {
    /// Experiment manifest (TOML)
    #[arg(long, short = 'm')]
    manifest: PathBuf,
    /// Override the dataset view (SUR or SEC)
    #[arg(long)]
    view: Option<String>,
    /// Override the output directory
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the training epoch count (cap 60)
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the sweep seeds (comma-separated)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the sweep embedding dimensions (comma-separated)
    #[arg(long, value_delimiter = ',')]
    embedding_dims: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset, split it, and write the patch store
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model over the sweep grid
    Train {
        #[command(flatten)]
        common: Common,
        /// What to train: teacher, student, siamese, or triplet
        target: String,
    },
    /// Run the k-NN sweep and emit results, PCA scatter, and plots
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Train a fusion head over the two views
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Fusion strategy: concat or stack_maxpool
        #[arg(long, default_value = "concat")]
        strategy: String,
    },
    /// Re-render plots from existing scatter CSVs
    Plot {
        #[command(flatten)]
        common: Common,
    },
}

fn load_manifest(common: &Common) -> Result<ExperimentManifest, Error> {
    let mut manifest = ExperimentManifest::from_path(&common.manifest)?;
    if let Some(view) = &common.view {
        manifest.dataset.view = view.clone();
    }
    if let Some(output) = &common.output {
        manifest.output.dir = output.clone();
    }
    if let Some(epochs) = common.epochs {
        if epochs == 0 || epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "--epochs must be in [1, {MAX_EPOCHS}], got {epochs}"
            )));
        }
        manifest.loss.epochs = epochs;
    }
    if let Some(seeds) = &common.seeds {
        manifest.sweep.seeds = seeds.clone();
    }
    if let Some(dims) = &common.embedding_dims {
        manifest.sweep.embedding_dims = dims.clone();
    }
    manifest.validate()?;
    Ok(manifest)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prepare { common } => {
            let manifest = load_manifest(&common)?;
            let summary = cmd_prepare(&manifest)?;
            println!(
                "prepared {} images -> {} train / {} test patches ({})",
                summary.n_images,
                summary.n_train_patches,
                summary.n_test_patches,
                summary.split_manifest.display()
            );
        }
        Command::Train { common, target } => {
            let manifest = load_manifest(&common)?;
            let target = TrainTarget::parse(&target)?;
            let stems = cmd_train(&manifest, target)?;
            println!("trained {} {} checkpoint(s)", stems.len(), target.as_str());
            for stem in stems {
                println!("  {}", stem.display());
            }
        }
        Command::Eval { common } => {
            let manifest = load_manifest(&common)?;
            let outputs = cmd_eval(&manifest)?;
            println!("results: {}", outputs.results_csv.display());
            println!("scatter: {}", outputs.pca_csv.display());
            println!("plot:    {}", outputs.pca_plot.display());
        }
        Command::Fuse { common, strategy } => {
            let manifest = load_manifest(&common)?;
            let strategy = FusionStrategy::parse(&strategy)?;
            let outputs = cmd_fuse(&manifest, strategy)?;
            println!("fusion table: {}", outputs.csv.display());
            for stem in outputs.checkpoints {
                println!("  {}", stem.display());
            }
        }
        Command::Plot { common } => {
            let manifest = load_manifest(&common)?;
            for png in cmd_plot(&manifest)? {
                println!("plot: {}", png.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                // Validation problems: bad manifests, bad flags, rejected
                // inputs, shape disagreements.
                Error::Config(_)
                | Error::Manifest(_)
                | Error::RejectedInput(_)
                | Error::ShapeMismatch(_) => ExitCode::from(2),
                // Runtime failures: I/O, decoding, non-finite numerics.
                _ => ExitCode::from(3),
            }
        }
    }
}
