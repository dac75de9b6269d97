//! Command-line front end for reconstruction-based anomaly segmentation on
//! synthetic brain phantoms. Exit codes: 0 success, 2 usage error, 1
//! runtime failure.

mod commands;
mod config;
mod png;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{resolve, Overrides};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, refused overwrites — exit code 2.
    Usage(String),
    /// Failures while doing the work — exit code 1.
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "uadseg",
    version,
    about = "Train autoencoders on healthy brain phantoms and segment anomalies \
             from reconstruction residuals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// key=value config file; explicit flags override file entries
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for all stochastic choices
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Architecture: b_tae|dc_tae|sc_tae|h_tae|h_tae_s|ae_dense|ae_spatial
    #[arg(long)]
    arch: Option<String>,
    /// Scale preset: desk (64×64) or full (256×256)
    #[arg(long)]
    preset: Option<String>,
    /// Top percentile kept by the segmentation threshold
    #[arg(long)]
    percentile: Option<f32>,
    /// Number of thresholds in the best-dice sweep
    #[arg(long)]
    sweep: Option<usize>,
    /// Write into a non-empty output directory
    #[arg(long)]
    force: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            arch: self.arch.clone(),
            preset: self.preset.clone(),
            percentile: self.percentile,
            sweep: self.sweep,
            ..Overrides::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits of synthetic brain phantoms
    GenData(GenDataArgs),
    /// Train an autoencoder on the healthy training split
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test splits; writes report.csv/report.txt
    Eval(EvalArgs),
    /// Segment one sample; writes stage tensors and inspection PNGs
    Segment(SegmentArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Healthy training samples
    #[arg(long)]
    n_train: Option<usize>,
    /// Healthy validation samples
    #[arg(long)]
    n_val: Option<usize>,
    /// Healthy test samples (reconstruction SSIM)
    #[arg(long)]
    n_test_healthy: Option<usize>,
    /// Anomalous test samples (segmentation metrics)
    #[arg(long)]
    n_test_anomalous: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset root (directory produced by gen-data)
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f32>,
    /// Validate every N epochs (the last epoch always validates)
    #[arg(long)]
    val_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset root (directory produced by gen-data)
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Trained checkpoint (.uadc)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Sweep a best-dice threshold per sample instead of per dataset
    #[arg(long)]
    per_sample_sweep: bool,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint (.uadc)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Sample directory holding image.uads
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => {
            let flags = Overrides {
                n_train: args.n_train,
                n_val: args.n_val,
                n_test_healthy: args.n_test_healthy,
                n_test_anomalous: args.n_test_anomalous,
                ..args.common.overrides()
            };
            let cfg = resolve(args.common.config.as_deref(), &flags)?;
            commands::gen_data(&cfg, args.common.force)
        }
        Command::Train(args) => {
            let flags = Overrides {
                dataset: args.dataset,
                epochs: args.epochs,
                batch_size: args.batch_size,
                lr: args.lr,
                val_every: args.val_every,
                ..args.common.overrides()
            };
            let cfg = resolve(args.common.config.as_deref(), &flags)?;
            commands::train_cmd(&cfg, args.common.force)
        }
        Command::Eval(args) => {
            let flags = Overrides {
                dataset: args.dataset,
                checkpoint: args.checkpoint,
                per_sample_sweep: args.per_sample_sweep,
                ..args.common.overrides()
            };
            let cfg = resolve(args.common.config.as_deref(), &flags)?;
            commands::eval_cmd(&cfg, args.common.force)
        }
        Command::Segment(args) => {
            let flags = Overrides {
                checkpoint: args.checkpoint,
                input: args.input,
                ..args.common.overrides()
            };
            let cfg = resolve(args.common.config.as_deref(), &flags)?;
            commands::segment_cmd(&cfg, args.common.force)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
