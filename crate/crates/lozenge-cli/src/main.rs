mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] lozenge::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_resource() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser, Serialize, Deserialize)]
#[command(name = "lozenge", version, about = "Lozenge tilings: counting, sampling, limit shapes, loop equations, fluctuations")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct Global {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "LOZENGE_THREADS")]
    pub threads: Option<usize>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Count the tilings of a domain exactly.
    Count(CountArgs),
    /// Draw random tilings.
    Sample(SampleArgs),
    /// Solve for the limit shape and its arctic curve.
    LimitShape(LimitShapeArgs),
    /// Compare loop-equation predictions with brute-force sums.
    LoopeqVerify(LoopEqArgs),
    /// Gaussianity and covariance of height fluctuations.
    Fluctuations(FluctuationArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    Lgv,
    Product,
    None,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct CountArgs {
    #[arg(long)]
    pub domain: PathBuf,
    /// Independent count to compare against.
    #[arg(long, value_enum, default_value_t = Oracle::None)]
    pub oracle: Oracle,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Mcmc,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Trajectories,
    Heights,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    pub method: Method,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// MCMC: sweeps before the first sample and between samples.
    #[arg(long, default_value_t = 1000)]
    pub sweeps: u64,
    #[arg(long, value_enum, default_value_t = Emit::Trajectories)]
    pub emit: Emit,
    /// JSON-lines output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct LimitShapeArgs {
    #[arg(long)]
    pub domain: PathBuf,
    /// Mesh cells per unit length in x and t; both must be equal and a
    /// multiple of the domain's n.
    #[arg(long, num_args = 2, value_names = ["NX", "NT"])]
    pub mesh: Vec<i64>,
    /// Prescribed heights along a horizontal slice.
    #[arg(long)]
    pub bottom: Option<PathBuf>,
    #[arg(long, default_value_t = lozenge::limit_shape::SolverOptions::default().tolerance)]
    pub tolerance: f64,
    /// Directory for heights.csv, slope.csv, arctic.csv and limit_shape.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct LoopEqArgs {
    /// Particle profile: blocks of particles realized at each n.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
    pub n_list: Vec<i64>,
    /// Evaluation points as `re:im`, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = ["0.5:1".to_string(), "1.6:0.3".to_string()])]
    pub z: Vec<String>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct FluctuationArgs {
    #[arg(long)]
    pub domain: PathBuf,
    /// Lattice refinement; the domain's vertices must lie on the 1/n grid.
    #[arg(long)]
    pub n: Option<i64>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Method::Mcmc)]
    pub method: Method,
    /// MCMC burn-in sweeps (default 8 n²).
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// MCMC sweeps between samples (default n²/4).
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long)]
    pub probes: PathBuf,
    /// Report JSON; CSV tables are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest_file: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::dispatch(cli, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
