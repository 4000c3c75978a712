//! The `rcod` command-line front end. [`run`] parses arguments and executes
//! one command in-process; the `rcod` binary only forwards its exit status.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::trainer::TrainConfig;

/// Exit status for bad flags, files or configs.
pub const EXIT_USER: u8 = 1;
/// Exit status for failures inside the library.
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rcod", version, about = "One-step diffusion super-resolution with controllable realism")]
struct Cli {
    /// Worker threads; 0 uses every core. RCOD_THREADS overrides this flag.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a paired HR/LR corpus and its manifest.
    SynthData(SynthArgs),
    /// Train the regularization teacher on all timesteps.
    TrainTeacher(TeacherArgs),
    /// Train the one-step student.
    Train(StudentArgs),
    /// Train the metric estimator used by adaptive realism.
    TrainMem(MemArgs),
    /// Restore one image.
    Infer(InferArgs),
    /// Restore a manifest under one or more realism settings and score it.
    Eval(EvalArgs),
    /// Render evaluation reports as a comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for images and manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    count: usize,
    /// HR patch side in pixels.
    #[arg(long, default_value_t = crate::degrade::DEFAULT_PATCH)]
    patch: usize,
    #[arg(long, default_value_t = crate::degrade::DEFAULT_SCALE)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flags shared by the training commands. Flags given on the command line
/// override the `--config` file, which overrides the built-in defaults.
#[derive(Args, Debug)]
struct CommonTrain {
    /// JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus manifest (overrides `train_manifest` in the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output checkpoint; logs and reports are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().holdout_fraction)]
    holdout_fraction: f64,
    /// Intermediate checkpoint cadence in steps (0 = off).
    #[arg(long, default_value_t = TrainConfig::default().checkpoint_every)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct TeacherArgs {
    #[command(flatten)]
    common: CommonTrain,
    #[arg(long, default_value_t = TrainConfig::default().teacher_steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
}

#[derive(Args, Debug)]
struct StudentArgs {
    #[command(flatten)]
    common: CommonTrain,
    /// Teacher checkpoint; required when --lambda-das > 0.
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().student_steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lambda_eps)]
    lambda_eps: f64,
    #[arg(long, default_value_t = TrainConfig::default().lambda_pix)]
    lambda_pix: f64,
    #[arg(long, default_value_t = TrainConfig::default().lambda_das)]
    lambda_das: f64,
    /// Latent metric: cosine, l1 or mse.
    #[arg(long, default_value = "cosine")]
    metric: String,
    /// Re-noise z_L to the chosen timestep before the student.
    #[arg(long, default_value_t = TrainConfig::default().noise_injection)]
    noise_injection: bool,
    /// Number of timestep groups.
    #[arg(long, default_value_t = TrainConfig::default().grouping.n)]
    groups: usize,
    /// Timestep spacing between groups.
    #[arg(long, default_value_t = TrainConfig::default().grouping.k)]
    group_step: usize,
    /// Validation cadence in steps (0 = only at the end).
    #[arg(long, default_value_t = TrainConfig::default().val_every)]
    val_every: usize,
}

#[derive(Args, Debug)]
struct MemArgs {
    #[command(flatten)]
    common: CommonTrain,
    /// Student checkpoint; needed for denoiser_bottleneck features.
    #[arg(long)]
    student: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().mem_steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().mem_learning_rate)]
    lr: f64,
    /// latent_spectrum, latent_stats, latent_stats_gradients or
    /// denoiser_bottleneck.
    #[arg(long, default_value = "latent_spectrum")]
    features: String,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Student checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// MEM checkpoint; required by --realism adaptive.
    #[arg(long)]
    mem_ckpt: Option<PathBuf>,
    /// LR image (PGM/PPM) on the HR grid, or smaller with --scale.
    #[arg(long)]
    input: PathBuf,
    /// Restored image; the sidecar goes to `<output>.json`.
    #[arg(long)]
    output: PathBuf,
    /// fid, neu, real, adaptive or t=<int>.
    #[arg(long, default_value = "fid")]
    realism: String,
    /// Bilinear upsampling applied to the input first.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mem_ckpt: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated realism settings.
    #[arg(long, default_value = "fid,neu,real", value_delimiter = ',')]
    realism: Vec<String>,
    #[arg(long)]
    report_path: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation reports written by `eval`.
    #[arg(long, num_args = 1.., required = true)]
    eval_jsons: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// True when `id` was given on the command line rather than defaulted.
fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn threads(flag: usize) -> Result<usize, String> {
    match std::env::var("RCOD_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| format!("RCOD_THREADS must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(flag),
    }
}

/// Runs one command line (`args[0]` is the program name) and returns the
/// process exit status: 0 on success, [`EXIT_USER`] or [`EXIT_INTERNAL`].
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USER;
        }
    };
    let n = match threads(cli.threads) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USER;
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match with_threads(n, || commands::run(cli.command, sub)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> crate::Result<R> + Send) -> crate::Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| crate::Error::Internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(_n: usize, f: impl FnOnce() -> crate::Result<R> + Send) -> crate::Result<R> {
    f()
}
