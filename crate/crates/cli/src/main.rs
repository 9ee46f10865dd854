mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser, serde::Serialize)]
#[command(name = "ggik", version, about = "Distance-geometric inverse kinematics toolkit")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    /// Worker threads for restarts, sampling and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, serde::Serialize)]
pub enum Command {
    /// Robot description files.
    #[command(subcommand)]
    Robot(RobotCmd),
    /// Datasets of IK problems.
    #[command(subcommand)]
    Data(DataCmd),
    /// Classical solvers.
    #[command(subcommand)]
    Solve(SolveCmd),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Sample IK solutions from a trained model.
    Sample(SampleArgs),
    /// Error statistics of a model (or an oracle) on held-out problems.
    Eval(EvalArgs),
    /// Train the equivariant and baseline models side by side and compare them.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand, serde::Serialize)]
pub enum RobotCmd {
    /// Check a spec and print its normalized form.
    Validate { spec: PathBuf },
    /// Print the spec of a built-in chain (planar-2r, planar-3r, spatial-4r, spatial-6r, spatial-7r).
    Show { name: String },
}

#[derive(Debug, Subcommand, serde::Serialize)]
pub enum DataCmd {
    Generate(GenerateArgs),
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GenerateArgs {
    /// Spec files or built-in chain names.
    #[arg(long, num_args = 1.., required = true)]
    pub robots: Vec<String>,
    #[arg(long)]
    pub per_chain: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Store both graphs with every record.
    #[arg(long)]
    pub with_graphs: bool,
}

#[derive(Debug, Subcommand, serde::Serialize)]
pub enum SolveCmd {
    /// Complete the partial graph of a goal by least squares.
    Dgp(DgpArgs),
}

#[derive(Debug, Args, serde::Serialize)]
pub struct DgpArgs {
    /// Spec file or built-in chain name.
    #[arg(long)]
    pub robot: String,
    #[arg(long)]
    pub goal: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "egnn")]
    pub arch: String,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub message: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub length_scale: Option<f64>,
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many optimiser steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub robot: String,
    #[arg(long)]
    pub goal: PathBuf,
    /// Samples drawn.
    #[arg(short = 'L', default_value_t = 32)]
    pub l: usize,
    /// Solutions kept.
    #[arg(short = 'K', default_value_t = 8)]
    pub k: usize,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct EvalArgs {
    /// Trained checkpoint. Exactly one of --ckpt and --oracle.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    pub ckpt: Option<PathBuf>,
    /// Reference sampler instead of a model: perfect or brute-force.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    /// Also write a per-sample table for plotting.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct AblateArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset; generated from the training chains when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Held-out problems per chain when generating the test set.
    #[arg(long, default_value_t = 100)]
    pub test_per_chain: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub emit_plot_data: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return report(&CliError::Usage(e.to_string()));
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).target(env_logger::Target::Stderr).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            return report(&CliError::Usage(e.to_string()));
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    let body = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
    eprintln!("{body}");
    ExitCode::from(e.exit_code())
}
