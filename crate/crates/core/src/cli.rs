//! The `hazecycle` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::AdamConfig;
use crate::image::{Image, ImageError};
use crate::losses::LossWeights;
use crate::metrics::{evaluate, Identity, MetricError};
use crate::mmd::KernelSpec;
use crate::nets::{Direction, HazeModel, ModelConfig, ModelError, DEFAULT_LATENT_DIM};
use crate::scene::{build_dataset, Dataset, DatasetError};
use crate::selfcheck;
use crate::trainer::{
    load_checkpoint, train, CheckpointError, RunSettings, TrainConfig, TrainError, DEFAULT_BUFFER,
    DEFAULT_CHECKPOINT_EVERY, DEFAULT_ITERATIONS, DEFAULT_SEED,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Check(String),
}

#[derive(Debug, Parser)]
#[command(name = "hazecycle", version, about = "Haze synthesis and removal with MMD-coupled VAE-GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic clear/depth/hazy dataset with a 3:1 train/test split.
    GenData(GenDataArgs),
    /// Train both VAE-GANs on a dataset.
    Train(TrainArgs),
    /// Translate clear images to hazy ones.
    Hazify(TranslateArgs),
    /// Translate hazy images to clear ones.
    Dehaze(TranslateArgs),
    /// Score a checkpoint on the test split with PSNR and SSIM.
    Eval(EvalArgs),
    /// Check the MMD estimator against a brute-force oracle.
    MmdCheck(CheckArgs),
    /// Check every autodiff primitive and the full objective against finite differences.
    GradCheck(CheckArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 80)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Total iterations (including any restored by --resume).
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta1)]
    beta1: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta2)]
    beta2: f64,
    #[arg(long = "lambda-m", default_value_t = LossWeights::default().mmd)]
    lambda_m: f64,
    #[arg(long = "lambda-adv", default_value_t = LossWeights::default().adv)]
    lambda_adv: f64,
    #[arg(long = "lambda-recon", default_value_t = LossWeights::default().recon)]
    lambda_recon: f64,
    /// Latent buffer capacity per domain.
    #[arg(long, default_value_t = DEFAULT_BUFFER)]
    buffer: usize,
    #[arg(long = "latent-dim", default_value_t = DEFAULT_LATENT_DIM)]
    latent_dim: usize,
    #[arg(long = "ckpt-every", default_value_t = DEFAULT_CHECKPOINT_EVERY)]
    ckpt_every: u64,
    /// Use zero latent noise during training.
    #[arg(long)]
    deterministic: bool,
    /// Continue from a checkpoint written with the same settings.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A PNG file or a directory of PNG files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG file, or a directory when --in is a directory.
    #[arg(long)]
    out: PathBuf,
    /// Zero latent noise.
    #[arg(long)]
    deterministic: bool,
    /// Seed for latent noise when not deterministic.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "identity")]
    ckpt: Option<PathBuf>,
    /// Score the pass-through mapping instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    identity: bool,
    #[arg(long)]
    data: PathBuf,
    /// dehazing (hazy-to-clear) or synthesis (clear-to-hazy).
    #[arg(long)]
    direction: Direction,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
    /// Also write input | output | reference PNGs here.
    #[arg(long)]
    triptychs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on usage errors and 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => {
            let m = build_dataset(a.count, a.seed, a.size, &a.out)?;
            println!(
                "wrote {} train / {} test records to {}",
                m.count(crate::scene::Split::Train),
                m.count(crate::scene::Split::Test),
                a.out.display()
            );
            Ok(())
        }
        Command::Train(a) => run_train(a),
        Command::Hazify(a) => run_translate(a, Direction::ClearToHazy),
        Command::Dehaze(a) => run_translate(a, Direction::HazyToClear),
        Command::Eval(a) => run_eval(a),
        Command::MmdCheck(a) => {
            let report = selfcheck::mmd_check(a.seed, 200);
            finish_check("mmd-check", &report)
        }
        Command::GradCheck(a) => {
            let report = selfcheck::grad_check(a.seed)?;
            finish_check("grad-check", &report)
        }
    }
}

fn finish_check(name: &str, report: &selfcheck::SuiteReport) -> Result<(), CliError> {
    for line in report.lines() {
        println!("{line}");
    }
    println!("{name}: {}/{} checks passed", report.passed(), report.checked());
    if report.ok() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{name} failed")))
    }
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let dataset = Dataset::open(&a.data)?;
    let size = dataset.manifest.image_size;
    let settings = RunSettings {
        model: ModelConfig::new(size, a.latent_dim),
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            ..AdamConfig::default()
        },
        weights: LossWeights {
            mmd: a.lambda_m,
            adv: a.lambda_adv,
            recon: a.lambda_recon,
        },
        buffer_capacity: a.buffer,
        kernel: KernelSpec::training_default(a.latent_dim),
        seed: a.seed,
        deterministic_eta: a.deterministic,
    };
    let config = TrainConfig {
        data: a.data,
        out: a.out,
        iterations: a.iters,
        checkpoint_every: a.ckpt_every,
        settings,
        resume: a.resume,
        progress: true,
    };
    let outcome = train(&config)?;
    println!(
        "trained {} iterations; checkpoint {}; metrics {}",
        outcome.state.iteration,
        outcome.final_checkpoint.display(),
        outcome.metrics.display()
    );
    Ok(())
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn translate_file(
    model: &HazeModel,
    input: &Path,
    output: &Path,
    direction: Direction,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(), CliError> {
    let image = Image::load_png(input)?;
    model.translate(&image, direction, rng)?.save_png(output)?;
    Ok(())
}

fn run_translate(a: TranslateArgs, direction: Direction) -> Result<(), CliError> {
    let model = load_checkpoint(&a.ckpt)?.model;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    if a.input.is_dir() {
        fs::create_dir_all(&a.out).map_err(io_error(&a.out))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(io_error(&a.input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in &files {
            let name = f.file_name().expect("file entry");
            let noise = (!a.deterministic).then_some(&mut rng);
            translate_file(&model, f, &a.out.join(name), direction, noise)?;
        }
        println!("{direction}: wrote {} images to {}", files.len(), a.out.display());
    } else {
        let noise = (!a.deterministic).then_some(&mut rng);
        translate_file(&model, &a.input, &a.out, direction, noise)?;
        println!("{direction}: wrote {}", a.out.display());
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let dataset = Dataset::open(&a.data)?;
    let triptychs = a.triptychs.as_deref();
    let report = match &a.ckpt {
        Some(path) => {
            let model = load_checkpoint(path)?.model;
            let label = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
            evaluate(&model, &dataset, a.direction, &label, triptychs)?
        }
        None => evaluate(&Identity, &dataset, a.direction, "identity", triptychs)?,
    };
    report.write_csv(&a.report)?;
    println!("{}", report.summary());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["hazecycle"]), EXIT_USAGE);
        assert_eq!(run(["hazecycle", "gen-data"]), EXIT_USAGE);
        assert_eq!(run(["hazecycle", "train", "--data", "d", "--out", "o", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["hazecycle", "eval", "--data", "d", "--direction", "sideways", "--report", "r", "--identity"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["hazecycle", "train", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_checkpoint_is_runtime_error() {
        assert_eq!(
            run(["hazecycle", "dehaze", "--ckpt", "/nonexistent/x.hzck", "--in", "a.png", "--out", "b.png"]),
            EXIT_RUNTIME
        );
    }

    #[test]
    fn defaults_match_module_defaults() {
        let cli = Cli::try_parse_from(["hazecycle", "train", "--data", "d", "--out", "o"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("train") };
        assert_eq!((a.lr, a.beta1, a.beta2), (1e-4, 0.5, 0.999));
        assert_eq!((a.lambda_m, a.lambda_adv, a.lambda_recon), (0.01, 1.0, 10.0));
        assert_eq!((a.iters, a.ckpt_every, a.buffer, a.latent_dim), (2000, 500, 64, 8));
    }
}
