//! `mcir`: simulate gated CT data and reconstruct it with PDHG or SPDHG.
//!
//! Exit status is 0 on success, 1 on runtime or I/O failure and 2 on usage
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use mcir_core::motion::MotionKind;
use mcir_core::pipeline::{DEFAULT_KAPPA, DEFAULT_POWER_SEED};
use mcir_core::linops::DEFAULT_POWER_ITERATIONS;
use mcir_core::simulate::{PhantomKind, Preset, DEFAULT_SEED};
use mcir_core::solvers::Mode;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "mcir", version, about = "Motion-compensated reconstruction of gated CT data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a phantom image
    Phantom(PhantomArgs),
    /// Simulate a gated dataset
    Simulate(SimulateArgs),
    /// Solve the normal equations for the saddle point
    Reference(ReferenceArgs),
    /// Run PDHG or SPDHG on a dataset
    Reconstruct(ReconstructArgs),
    /// Print condition numbers and theoretical rates
    Rates(RatesArgs),
    /// Simulate, solve and compare both algorithms across seeds
    Experiment(ExperimentArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PhantomArg {
    NestedShells,
    Thorax,
}

impl From<PhantomArg> for PhantomKind {
    fn from(p: PhantomArg) -> Self {
        match p {
            PhantomArg::NestedShells => PhantomKind::NestedShells,
            PhantomArg::Thorax => PhantomKind::Thorax,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Rigid,
    Nonrigid,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Rigid => Preset::Rigid,
            PresetArg::Nonrigid => Preset::Nonrigid,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MotionArg {
    Rigid,
    Dilatation,
}

impl From<MotionArg> for MotionKind {
    fn from(m: MotionArg) -> Self {
        match m {
            MotionArg::Rigid => MotionKind::Rigid,
            MotionArg::Dilatation => MotionKind::Dilatation,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Pdhg,
    Spdhg,
}

impl From<AlgoArg> for Mode {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Pdhg => Mode::Pdhg,
            AlgoArg::Spdhg => Mode::Spdhg,
        }
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a nonnegative finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, value_enum)]
    kind: PhantomArg,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(16..=4096))]
    rows: u32,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(16..=4096))]
    cols: u32,
    /// Output raster (`.f64`)
    #[arg(long)]
    out: PathBuf,
    /// Also write a 16-bit PGM preview
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "phantom"])))]
struct SimulateArgs {
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Custom phantom; requires --gates
    #[arg(long, value_enum, requires = "gates")]
    phantom: Option<PhantomArg>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=1000))]
    gates: Option<u32>,
    /// Motion model (default: rigid for nested-shells, dilatation for thorax)
    #[arg(long, value_enum)]
    motion: Option<MotionArg>,
    /// Terminal motion magnitude (radians for rigid, scale - 1 for dilatation)
    #[arg(long, value_parser = nonnegative)]
    magnitude: Option<f64>,
    /// Absolute noise level; default is 2% of the largest noiseless bin
    #[arg(long, value_parser = nonnegative)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Use the 64x64 geometry instead of 100x100
    #[arg(long)]
    fast: bool,
    #[arg(long, default_value_t = DEFAULT_POWER_ITERATIONS)]
    power_iterations: usize,
    #[arg(long, default_value_t = DEFAULT_POWER_SEED)]
    power_seed: u64,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1e-12, value_parser = positive)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_KAPPA, value_parser = positive)]
    kappa: f64,
    /// Replace every warp with the identity
    #[arg(long)]
    no_mc: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Spdhg)]
    algo: AlgoArg,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_KAPPA, value_parser = positive)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace every warp with the identity
    #[arg(long)]
    no_mc: bool,
    /// Reference directory written by `mcir reference`, for distance logging
    #[arg(long)]
    saddle: Option<PathBuf>,
    /// Also write the final primal-dual state
    #[arg(long)]
    dump_state: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KAPPA, value_parser = positive)]
    kappa: f64,
    /// Print JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
    /// Number of SPDHG seeds
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    seeds: u32,
    /// Epoch of the reconstruction snapshots
    #[arg(long, default_value_t = 30)]
    snapshot: u32,
    #[arg(long, default_value_t = DEFAULT_KAPPA, value_parser = positive)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-12, value_parser = positive)]
    tol: f64,
    /// Dataset seed
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    out: PathBuf,
}

/// An error attributable to the command line rather than the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Reference(a) => commands::reference(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Rates(a) => commands::rates(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
