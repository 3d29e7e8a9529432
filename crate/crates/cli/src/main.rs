//! `derender`: dataset generation, training, evaluation and rendering.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, ProtocolArg};

// glibc malloc fragments under the training loop's mix of tensor sizes and
// its resident size climbs by gigabytes over a desk run.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Exit code 1: the invocation or its inputs are wrong. Exit code 2:
/// something failed that the user could not have prevented.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "derender", version, about = "Part-based single-image 3D reconstruction")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic articulated-figure dataset.
    GenData(GenDataArgs),
    /// Train on a generated dataset.
    Train(TrainArgs),
    /// Voxel IoU of a checkpoint (or the ground-truth oracle) on the test split.
    Eval(EvalArgs),
    /// Reconstruct an image and re-render it.
    Render(RenderArgs),
    /// Print the built-in defaults as a config file.
    Defaults,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    quadruplets: Option<usize>,
    #[arg(long)]
    test_poses: Option<usize>,
    #[arg(long)]
    test_views: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for the loss log, checkpoints and run.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train without the shared shape latent (the free ablation).
    #[arg(long)]
    no_pose_consistency: bool,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint; the step counter carries over.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    log_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Score the ground-truth part meshes instead of a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input PNG, sized like the training images.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Azimuth the input was seen from (e.g. `30deg`, `0.5rad`).
    #[arg(long, allow_hyphen_values = true)]
    input_azimuth: Option<String>,
    /// Azimuth offset of the new view (e.g. `+90deg`).
    #[arg(long, allow_hyphen_values = true)]
    azimuth: Option<String>,
    /// Absolute elevation of the new view.
    #[arg(long, allow_hyphen_values = true)]
    elevation: Option<String>,
    #[arg(long)]
    directional: Option<f64>,
    #[arg(long)]
    ambient: Option<f64>,
    /// Give every part its own color.
    #[arg(long)]
    recolor: bool,
    /// Write one OBJ per part.
    #[arg(long)]
    export_obj: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = config::ConfigFile::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::GenData(a) => commands::gen_data(&file, a),
        Command::Train(a) => commands::train(&file, a),
        Command::Eval(a) => commands::eval(&file, a),
        Command::Render(a) => render::render(&file, a),
        Command::Defaults => {
            print!("{}", commands::defaults_toml());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::User(_) => 1,
                CliError::Internal(_) => 2,
            })
        }
    }
}
