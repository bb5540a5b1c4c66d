//! The `qpoisson` binary: every pipeline stage as a subcommand, with JSON
//! files passed between stages.

mod commands;
mod files;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpoisson_core::Error;

pub use files::OUT_DIR_ENV;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad or missing flags, out-of-range parameters)
  3  validation failure (invalid chain, inconsistent input files)
  4  numeric fault (singular system, divergence, non-convergence, episode cap)
  5  I/O failure (unreadable, unwritable or malformed file)

Relative output paths are resolved against $QPOISSON_OUT_DIR when it is set.";

#[derive(Debug, Parser)]
#[command(
    name = "qpoisson",
    version,
    about = "Gauge-fixed Poisson equation solver for multichain and periodic Markov reward processes",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// Base seed from which every random stream is derived
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel stages (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a chain file (row sums, signs, reward bound)
    Validate(ValidateArgs),
    /// Learn the support graph and recover classes, periods, phases and anchors
    Structure(StructureArgs),
    /// Compute phase-offset absorption weights for a structure
    Weights(WeightsArgs),
    /// Assemble the gauge map from a structure and its weights
    Gauge(GaugeArgs),
    /// Run projected stochastic approximation and recover the gain
    Solve(SolveArgs),
    /// Estimate anchor residuals and the gain profile for a stored iterate
    Residual(ResidualArgs),
    /// Exact bias, residual, gain and quotient diagnostics
    Oracle(OracleArgs),
    /// Run the benchmark suite and write per-seed error curves
    Bench(BenchArgs),
    /// Sample budgets and the expected simulator query count
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    /// Row-sum tolerance
    #[arg(long, default_value_t = qpoisson_core::DEFAULT_TOL)]
    pub tol: f64,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    /// Successor samples per state
    #[arg(long = "K", required_unless_present = "exact")]
    pub k: Option<usize>,
    /// Use the exact support of P instead of sampling
    #[arg(long, conflicts_with = "k")]
    pub exact: bool,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    /// Structure file written by `structure`
    #[arg(long)]
    pub structure: PathBuf,
    /// Absorption episodes per transient state
    #[arg(long = "M", required_unless_present = "exact")]
    pub m: Option<usize>,
    /// Solve the absorption system exactly instead of sampling
    #[arg(long, conflicts_with = "m")]
    pub exact: bool,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GaugeArgs {
    /// Structure file written by `structure`
    #[arg(long)]
    pub structure: PathBuf,
    /// Weights file written by `weights`
    #[arg(long)]
    pub weights: PathBuf,
    /// Another gauge file; report the operator-norm deviation from it
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GaugeSourceArgs {
    /// `exact`, `estimated`, or a gauge file written by `gauge`
    #[arg(long, default_value = "exact")]
    pub gauge: String,
    /// Structure samples per state for `--gauge estimated`
    #[arg(long = "K", default_value_t = 150)]
    pub k: usize,
    /// Absorption episodes per transient state for `--gauge estimated`
    #[arg(long = "M", default_value_t = 4000)]
    pub m: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    #[command(flatten)]
    pub source: GaugeSourceArgs,
    /// Step sizes: `poly:ALPHA,EXPONENT,OFFSET` or `inv:ALPHA,T0`
    #[arg(long, default_value = "poly:1,0.65,500")]
    pub schedule: String,
    /// Iterations
    #[arg(long = "T", default_value_t = 12_000)]
    pub iterations: u64,
    /// Trace logging interval
    #[arg(long, default_value_t = 120)]
    pub log_every: u64,
    /// Successor samples per anchor for the residual
    #[arg(long = "J", default_value_t = 220)]
    pub j: usize,
    /// Result JSON with the final iterate, residual and gain (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace CSV: iteration, sup norm, distance to the exact bias (exact gauge)
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    #[command(flatten)]
    pub source: GaugeSourceArgs,
    /// Result JSON written by `solve`; its final iterate is used
    #[arg(long)]
    pub iterate: PathBuf,
    /// Successor samples per anchor
    #[arg(long = "J", default_value_t = 220)]
    pub j: usize,
    /// Stream round, to draw fresh samples for repeated estimates
    #[arg(long, default_value_t = 0)]
    pub round: u64,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Chain file: {"n", "P", "r", "R"}
    #[arg(long)]
    pub chain: PathBuf,
    /// Also run the Monte-Carlo transient-cost check with this many episodes per state
    #[arg(long)]
    pub cost_episodes: Option<usize>,
    /// Also report the largest return-identity residual at this horizon
    #[arg(long)]
    pub identity_horizon: Option<usize>,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub action: Option<BenchAction>,
    #[command(flatten)]
    pub run: BenchRunArgs,
}

#[derive(Debug, Args)]
pub struct BenchRunArgs {
    /// Instance name, or `all`
    #[arg(long, default_value = "all")]
    pub instance: String,
    /// Divide every phase size by this factor; above 1 also selects the short 4000-iteration profile
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Curves CSV
    #[arg(long, default_value = "curves.csv")]
    pub out: PathBuf,
    /// Also write the mean/std summary CSV here
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Override the iteration count
    #[arg(long = "T")]
    pub iterations: Option<u64>,
    /// Override the logging interval
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Override the structure sample count
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Override the absorption episode count
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Override the residual sample count
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Override the step-size schedule
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum BenchAction {
    /// Mean and standard deviation over seeds per (instance, method, iteration)
    Summarize {
        /// Curves CSV written by `bench`
        #[arg(long)]
        curves: PathBuf,
        /// Summary CSV (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Number of states
    #[arg(long)]
    pub n: Option<usize>,
    /// Smallest positive transition probability
    #[arg(long)]
    pub p_min: Option<f64>,
    /// Number of transient states
    #[arg(long)]
    pub t_count: Option<usize>,
    /// Number of phase columns
    #[arg(long = "N")]
    pub num_phases: Option<usize>,
    /// Target accuracy
    #[arg(long)]
    pub eps: f64,
    /// Failure probability
    #[arg(long)]
    pub delta: f64,
    /// Chain file: fills missing sizes and adds the absorption-time term
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::InvalidArgument(_) => 2,
            Error::Validation(_) | Error::Dimension(_) | Error::GaugeMismatch(_) => 3,
            Error::DeadEnd { .. }
            | Error::Singular(_)
            | Error::EpisodeCap { .. }
            | Error::Diverged { .. }
            | Error::NoConvergence { .. } => 4,
            Error::Io { .. } | Error::Format { .. } => 5,
            Error::Stage { .. } => unreachable!("root strips stage labels"),
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Structure(a) => commands::structure(a, cli.seed),
        Command::Weights(a) => commands::weights(a, cli.seed),
        Command::Gauge(a) => commands::gauge(a),
        Command::Solve(a) => commands::solve(a, cli.seed),
        Command::Residual(a) => commands::residual(a, cli.seed),
        Command::Oracle(a) => commands::oracle(a, cli.seed),
        Command::Bench(a) => commands::bench(a),
        Command::Plan(a) => commands::plan(a),
    }
}

/// Parse `args`, configure the thread pool and run.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if cli.threads > 0 {
        // A second pool request in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
