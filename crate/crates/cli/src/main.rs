//! `tdsnn`: reproducible experiments over the distillation engine.
//!
//! Settings are resolved in three layers: built-in defaults, then the
//! `--config` file, then command-line flags (`--set key=value` and the
//! named flags, in that order). Every output lands under `--out`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tdsnn", version, about = "Temporal-wise distillation for spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the spiral dataset as train.csv and test.csv.
    GenData(GenDataArgs),
    /// Train the MLP teacher; writes teacher.ckpt and teacher_logits.csv.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a spiking student; writes model.ckpt and losses.csv.
    Train(TrainArgs),
    /// Accuracy at every inference T_k; writes sweep.csv and firing_rates.csv.
    EvalSweep(EvalSweepArgs),
    /// Confidence-thresholded early exit; writes early_exit.csv.
    EarlyExit(EarlyExitArgs),
    /// Certify the loss bounds; writes bounds.csv and bounds.txt.
    VerifyBounds(VerifyBoundsArgs),
    /// Compare BPTT gradients with finite differences; writes gradcheck.csv.
    Gradcheck(GradcheckArgs),
    /// Per-timestep student logits; writes logits.csv.
    DumpLogits(DumpLogitsArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` run configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training CSV (`label,f1,..`); the spiral generator is used if absent.
    #[arg(long, value_name = "PATH", requires = "test_csv")]
    train_csv: Option<PathBuf>,
    /// Test CSV, same layout as the training CSV.
    #[arg(long, value_name = "PATH", requires = "train_csv")]
    test_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Angular noise standard deviation in radians.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Teacher checkpoint; a teacher is trained first if neither source is given.
    #[arg(long, value_name = "PATH", conflicts_with = "teacher_logits")]
    teacher: Option<PathBuf>,
    /// Precomputed teacher logits for the training set (`sample_id,z1,..`).
    #[arg(long, value_name = "PATH")]
    teacher_logits: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training timesteps.
    #[arg(long = "T", value_name = "T")]
    timesteps: Option<usize>,
    /// standard_kd, temporal_kd_full, twce_only, twce_twsd or twce_twkl.
    #[arg(long)]
    loss_mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
}

#[derive(Debug, Args)]
struct EvalSweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Student checkpoints, one sweep row each; repeatable.
    #[arg(long, value_name = "PATH", required = true)]
    model: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EarlyExitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Confidence thresholds in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.8,0.9,0.99,0.999")]
    cs: Vec<f64>,
    /// Maximum timesteps; defaults to the checkpoint's trained T.
    #[arg(long = "T", value_name = "T")]
    timesteps: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyBoundsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Certify on a trained student's test-set logits instead of random ones.
    #[arg(long, value_name = "PATH", requires = "teacher")]
    model: Option<PathBuf>,
    /// Teacher checkpoint used with `--model`.
    #[arg(long, value_name = "PATH", requires = "model")]
    teacher: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Loss modes to check; all by default.
    #[arg(long, value_delimiter = ',')]
    loss_mode: Vec<String>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    max_rel_error: f64,
}

#[derive(Debug, Args)]
struct DumpLogitsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Dump the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    /// Timesteps to unroll; defaults to the checkpoint's trained T.
    #[arg(long = "T", value_name = "T")]
    timesteps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::from(1)
        }
    }
}
