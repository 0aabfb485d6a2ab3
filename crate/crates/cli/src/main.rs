//! `cgseg`: mask conversion, training, evaluation, benchmarking and serving.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 data or format
//! error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cgseg_core::{Error, FineLayout, Level};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgseg", version, about = "Two-level Gaussian feature fields and click-to-segment queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask ingestion.
    #[command(subcommand)]
    Masks(MasksCommand),
    /// Trains per-Gaussian features from per-view masks.
    Train(TrainArgs),
    /// Label propagation from a reference view, scored by mIoU.
    Eval(EvalArgs),
    /// Generates a synthetic scene with truth labels and (noisy) masks.
    Synth(SynthArgs),
    /// Measures render time and click latency.
    Bench(BenchArgs),
    /// Serves interactive sessions.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum MasksCommand {
    /// Converts per-view segment exports (`*.json`) into segment files and two-level ID maps.
    Convert {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long = "out", value_name = "DIR")]
        output: PathBuf,
    },
}

/// One flag per training config key; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct ConfigOverrides {
    #[arg(long)]
    lambda_neg_cont: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    tau_f: Option<f64>,
    #[arg(long)]
    tau_c: Option<f64>,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    pixels_per_iter: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    gfl_start: Option<usize>,
    #[arg(long)]
    gfl_update_every: Option<usize>,
    #[arg(long)]
    n_spatial: Option<usize>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    hdbscan_eps_coarse: Option<f64>,
    #[arg(long)]
    hdbscan_eps_fine: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_layout)]
    fine_layout: Option<FineLayout>,
}

fn parse_layout(s: &str) -> Result<FineLayout, String> {
    match s {
        "shared" => Ok(FineLayout::Shared),
        "independent" => Ok(FineLayout::Independent),
        _ => Err(format!("expected `shared` or `independent`, got `{s}`")),
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Scene PLY.
    #[arg(long)]
    scene: PathBuf,
    /// Directory of `*.cgsg` segment files.
    #[arg(long)]
    masks: PathBuf,
    /// JSON array of cameras; a mask's view id indexes it.
    #[arg(long)]
    cameras: PathBuf,
    /// TOML config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-iteration loss terms.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Truth maps `<view>_object.png` / `<view>_part.png` (or `_coarse` / `_fine`).
    #[arg(long)]
    gt: PathBuf,
    /// Camera JSON; defaults to `cameras.json` next to the truth directory.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// View whose truth masks are propagated; defaults to the lowest view id.
    #[arg(long)]
    reference_view: Option<u32>,
    /// Target views (comma separated); defaults to every other truth view.
    #[arg(long, value_delimiter = ',')]
    views: Vec<u32>,
    /// Levels to evaluate.
    #[arg(long, value_delimiter = ',', default_values = ["coarse", "fine"])]
    levels: Vec<Level>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// TOML synthetic spec; omitted keys keep their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100)]
    clicks: usize,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Camera JSON and index; defaults to an overview camera.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Overview camera size (ignored with --cameras).
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    #[arg(long, default_value = "coarse")]
    level: Level,
    /// Seeds the choice of clicked pixels.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-click timings as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = "CGSEG_BIND", default_value = "127.0.0.1:7878")]
    bind: String,
}

/// Failure of a subcommand, with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::NonFinite { .. } | Error::WeightOverflow { .. } => 4,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CGSEG_THREADS") else { return Ok(()) };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::usage(format!("CGSEG_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Masks(MasksCommand::Convert { input, output }) => commands::masks_convert(&input, &output),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
