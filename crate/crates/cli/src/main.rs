//! Command-line driver: dataset synthesis, blind/nonblind solving, estimator
//! training, and quality evaluation, glued to the `blindsr` library.
//!
//! Every option can come from three layers — built-in defaults, a TOML config
//! file, and command-line flags — with later layers winning. All randomness
//! derives from the single `--seed` via purpose strings, so identical
//! invocations produce identical artifacts.

mod config;
mod eval;
mod solve;
mod synth;
mod train;
mod util;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Failures the driver distinguishes by exit code: 1 for runtime errors,
/// 2 for bad usage (matching argument-parse failures), 3 for divergent
/// training runs.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Divergence(String),
}

impl From<blindsr::Error> for CliError {
    fn from(e: blindsr::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Runtime(_) => ExitCode::from(1),
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Divergence(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Divergence(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "blindsr",
    version,
    about = "Blind single-image super-resolution toolkit",
    propagate_version = true
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; every random stream derives from it and a purpose string.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for batch commands (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade high-resolution images into a labeled dataset with a manifest.
    Synth(SynthArgs),
    /// Restore a single observation or every record of a manifest.
    Solve(SolveArgs),
    /// Fit the bandwidth predictor and restorer ridge on a dataset.
    Train(TrainArgs),
    /// Score restored images against ground truth on the luma channel.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory of high-resolution PNG inputs.
    #[arg(long, value_name = "DIR")]
    hr_dir: Option<PathBuf>,
    /// Dataset output directory (lr/, hr/, kernels/, manifest.jsonl).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Decimation factor.
    #[arg(long, value_name = "S")]
    scale: Option<usize>,
    /// Noise standard deviation in intensity units.
    #[arg(long, value_name = "V")]
    sigma: Option<f64>,
    /// Odd blur-kernel support in high-resolution pixels.
    #[arg(long, value_name = "P")]
    support: Option<usize>,
    /// Rate of the exponential prior the squared bandwidths are drawn from.
    #[arg(long, value_name = "R")]
    rate: Option<f64>,
    /// Number of Gaussian components per kernel.
    #[arg(long, value_name = "L")]
    components: Option<usize>,
    /// Convolution boundary handling: circular or replicate.
    #[arg(long, value_name = "MODE")]
    boundary: Option<String>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct SolveArgs {
    /// Single low-resolution PNG to restore.
    #[arg(long, value_name = "PNG")]
    lr: Option<PathBuf>,
    /// Restore every record of this manifest instead of a single image.
    #[arg(long, value_name = "JSONL", conflicts_with = "lr")]
    manifest: Option<PathBuf>,
    /// Restored image path (single-image mode).
    #[arg(long, value_name = "PNG")]
    out: Option<PathBuf>,
    /// Output directory with sr/, kernels/, traces/ (manifest mode).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Write the estimated (or supplied) kernel grid here (single-image mode).
    #[arg(long, value_name = "TXT", conflicts_with = "manifest")]
    kernel_out: Option<PathBuf>,
    /// Write the per-half-step bound trace here (single-image mode).
    #[arg(long, value_name = "CSV", conflicts_with = "manifest")]
    trace: Option<PathBuf>,
    /// Known squared bandwidths a,b,c,...: skip estimation, solve nonblind.
    #[arg(long, value_name = "B2", value_delimiter = ',')]
    b2: Option<Vec<f64>>,
    /// Decimation factor.
    #[arg(long, value_name = "S")]
    scale: Option<usize>,
    /// Noise standard deviation in intensity units.
    #[arg(long, value_name = "V")]
    sigma: Option<f64>,
    /// Odd blur-kernel support in high-resolution pixels.
    #[arg(long, value_name = "P")]
    support: Option<usize>,
    /// Ridge weight anchoring the restoration to its bicubic initialization.
    #[arg(long, value_name = "R")]
    ridge: Option<f64>,
    /// Maximum outer iterations of the blind solver.
    #[arg(long, value_name = "N")]
    max_outer: Option<usize>,
    /// Rate-update ascent steps per outer iteration.
    #[arg(long, value_name = "N")]
    e_steps: Option<usize>,
    /// Conjugate-gradient iterations per image update.
    #[arg(long, value_name = "N")]
    m_cg_iters: Option<usize>,
    /// Relative bound change that stops the blind solver early.
    #[arg(long, value_name = "T")]
    tol_rel: Option<f64>,
    /// Monte Carlo bandwidth draws shared across the run.
    #[arg(long, value_name = "M")]
    n_mc: Option<usize>,
    /// Number of Gaussian components in the kernel model.
    #[arg(long, value_name = "L")]
    components: Option<usize>,
    /// Rate of the exponential prior and of the initial posterior.
    #[arg(long, value_name = "R")]
    rate: Option<f64>,
    /// Convolution boundary handling: circular or replicate.
    #[arg(long, value_name = "MODE")]
    boundary: Option<String>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Manifest of labeled records (HR images present).
    #[arg(long, value_name = "JSONL")]
    manifest: Option<PathBuf>,
    /// Manifest of observations used without their labels.
    #[arg(long, value_name = "JSONL")]
    unlabeled: Option<PathBuf>,
    /// Where to write the trained parameters.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
    /// Where to write the per-epoch loss curve.
    #[arg(long, value_name = "CSV")]
    curve: Option<PathBuf>,
    /// Weight of the bound-based unsupervised loss term.
    #[arg(long, value_name = "A")]
    alpha_g: Option<f64>,
    /// Weight of the supervised regression loss term.
    #[arg(long, value_name = "A")]
    alpha_r: Option<f64>,
    /// Number of passes over the data.
    #[arg(long, value_name = "E")]
    epochs: Option<usize>,
    /// Samples per dataset per optimization step.
    #[arg(long, value_name = "B")]
    batch_size: Option<usize>,
    /// Adam step size.
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
    /// Monte Carlo bandwidth draws per loss evaluation.
    #[arg(long, value_name = "M")]
    n_mc: Option<usize>,
    /// Central finite-difference step for parameter gradients.
    #[arg(long, value_name = "H")]
    fd_step: Option<f64>,
    /// Number of Gaussian components the predictor outputs rates for.
    #[arg(long, value_name = "L")]
    components: Option<usize>,
    /// Fixed conjugate-gradient iteration count of the unrolled restorer.
    #[arg(long, value_name = "T")]
    restore_iters: Option<usize>,
    /// Odd blur-kernel support in high-resolution pixels.
    #[arg(long, value_name = "P")]
    support: Option<usize>,
    /// Decimation factor.
    #[arg(long, value_name = "S")]
    scale: Option<usize>,
    /// Noise standard deviation in intensity units.
    #[arg(long, value_name = "V")]
    sigma: Option<f64>,
    /// Rate of the exponential prior on squared bandwidths.
    #[arg(long, value_name = "R")]
    rate: Option<f64>,
    /// Convolution boundary handling: circular or replicate.
    #[arg(long, value_name = "MODE")]
    boundary: Option<String>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of restored PNG images.
    #[arg(long, value_name = "DIR")]
    sr_dir: PathBuf,
    /// Directory of ground-truth PNG images; files pair by stem.
    #[arg(long, value_name = "DIR")]
    hr_dir: PathBuf,
    /// Per-image PSNR/SSIM table.
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::load_file(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let jobs = cli
        .jobs
        .or(file.jobs)
        .unwrap_or_else(util::default_jobs)
        .max(1);
    match cli.command {
        Command::Synth(args) => synth::run(&args, &file, seed),
        Command::Solve(args) => solve::run(&args, &file, seed, jobs),
        Command::Train(args) => train::run(&args, &file, seed),
        Command::Eval(args) => eval::run(&args, jobs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
