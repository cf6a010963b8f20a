//! The `hybridmem` command line: synthetic and file-fed streams, trajectory
//! evaluation, stitching of dumped chunk predictions, scaling benchmarks,
//! gradient checks and the associative-recall probe.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 on numerical
//! failure.

mod commands;
pub mod report;
pub mod schema;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hybridmem::eval::{AteAlignment, BenchConfig};
use hybridmem::stream::{GaugeMode, MotionModel};
use hybridmem::{AlignMode, Error};

pub const SEED_ENV: &str = "HYBRIDMEM_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hybridmem", version, about = "Hybrid-memory streaming reconstruction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a synthetic stream, or restitch a dumped one, and report ATE and per-chunk diagnostics.
    Stream(StreamArgs),
    /// Absolute trajectory error between two pose files.
    Ate(AteArgs),
    /// Stitch dumped chunk predictions into one trajectory.
    Stitch(StitchArgs),
    /// Time the streaming configurations against sequence length.
    Bench(BenchArgs),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Store random key-value pairs in a fast-weight memory and measure retrieval.
    Recall(RecallArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorKind {
    Model,
    Oracle,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Number of synthetic frames.
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Chunks between fast-weight resets; 0 disables. Defaults to the model config's value.
    #[arg(long)]
    pub reset_period: Option<usize>,
    #[arg(long, default_value = "rigid", value_parser = parse_from_str::<AlignMode>)]
    pub align: AlignMode,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model configuration, JSON or TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PredictorKind::Model)]
    pub predictor: PredictorKind,
    #[arg(long, default_value = "straight", value_parser = parse_from_str::<MotionModel>)]
    pub motion: MotionModel,
    /// Per-chunk gauge applied by the oracle predictor.
    #[arg(long, default_value = "se3", value_parser = parse_from_str::<GaugeMode>)]
    pub gauge: GaugeMode,
    /// Chunks sharing one oracle gauge; 0 draws a fresh gauge per chunk.
    #[arg(long, default_value_t = 0)]
    pub gauge_period: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_t: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_r: f64,
    /// Log-normal per-frame scale noise of the oracle.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_s: f64,
    /// Replay chunk predictions from a JSON-lines dump instead of generating a scene.
    #[arg(long, conflicts_with_all = ["config", "load_state", "save_state"])]
    pub input: Option<PathBuf>,
    /// Ground-truth pose file for ATE of a replayed stream.
    #[arg(long, requires = "input")]
    pub gt: Option<PathBuf>,
    /// Write the raw chunk predictions as a JSON-lines dump.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Write the stitched trajectory as a pose file.
    #[arg(long)]
    pub poses_out: Option<PathBuf>,
    /// Fast-weight snapshot to start from.
    #[arg(long)]
    pub load_state: Option<PathBuf>,
    /// Write the final fast weights as a snapshot.
    #[arg(long)]
    pub save_state: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AteArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "sim3", value_parser = parse_from_str::<AteAlignment>)]
    pub alignment: AteAlignment,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// JSON-lines dump of chunk predictions.
    #[arg(long)]
    pub chunks: PathBuf,
    #[arg(long, default_value = "rigid", value_parser = parse_from_str::<AlignMode>)]
    pub mode: AlignMode,
    /// Reset period the stream was produced with; used by `--mode none`.
    #[arg(long, default_value_t = 5)]
    pub reset_period: usize,
    /// Ground-truth pose file; adds an ATE summary.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "sim3", value_parser = parse_from_str::<AteAlignment>)]
    pub alignment: AteAlignment,
    #[arg(long)]
    pub poses_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "hybrid,swa_only,ttt_only,full_attention", value_parser = parse_from_str::<BenchConfig>)]
    pub configs: Vec<BenchConfig>,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Timed runs per point after one discarded warm-up.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// First seed of the sweep.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the seed sweep; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecallArgs {
    #[arg(long, default_value_t = 16)]
    pub pairs: usize,
    #[arg(long, default_value_t = 16)]
    pub dims: usize,
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    /// Pairs per update; 0 writes all pairs in one update.
    #[arg(long, default_value_t = 0)]
    pub chunk_pairs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Errors surfaced by a subcommand, already classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => EXIT_INVALID,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Self::Numerical(e.to_string())
        } else {
            Self::Invalid(e.to_string())
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Invalid(m) | Self::Numerical(m) => write!(f, "error: {m}"),
        }
    }
}

/// `--seed` if given, else the environment default, else 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Parse `args` (program name first), run the subcommand and return its exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_INVALID
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Stream(a) => commands::stream(a, stdout),
        Command::Ate(a) => commands::ate(a, stdout),
        Command::Stitch(a) => commands::stitch(a, stdout),
        Command::Bench(a) => commands::bench(a, stdout),
        Command::Gradcheck(a) => commands::gradcheck(a, stdout),
        Command::Recall(a) => commands::recall(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "{f}");
            f.exit_code()
        }
    }
}
