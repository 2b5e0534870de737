//! `hjb` — experiment runner for the value/Lyapunov learning library.
//!
//! Subcommands: `train` (fit a network, emit curves + checkpoint), `eval`
//! (closed-loop cost of a checkpoint), `mpc` (MPPI runs with/without
//! value-function warmstarting), `plot` (re-render curves from CSV), and
//! `levelset` (sample a checkpoint on a grid and contour it).
//!
//! Every invocation writes its artifacts under one output directory: the
//! resolved configuration is echoed to `config.toml`, every file written is
//! listed in `manifest`, and all CSVs use a comma delimiter, `.` decimal
//! separator, a header row, and LF line endings. Runs are deterministic:
//! repeating an invocation with the same configuration and seed reproduces
//! the CSV artifacts byte for byte.
//!
//! Exit codes: 0 on success, 2 for configuration/usage errors (nothing
//! written), 3 for numeric failures (partial artifacts are kept).

mod artifacts;
mod commands;
mod config;
mod levelset;
mod svg;

use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::process::ExitCode;

/// Usage errors abort before artifacts; numeric errors keep partial output.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file, or referenced paths (exit 2).
    Usage(String),
    /// Divergence or non-finite numbers during a run (exit 3).
    Numeric(String),
    /// Filesystem trouble while writing artifacts (exit 1).
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<hjb_core::Error> for CliError {
    fn from(e: hjb_core::Error) -> CliError {
        use hjb_core::Error::*;
        match e {
            NonFinite(_) | DivergedRollout { .. } | DegenerateNormalization => {
                CliError::Numeric(e.to_string())
            }
            Contract { .. } | InvalidConfig(_) | Checkpoint(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "hjb",
    about = "Learn HJB value/Lyapunov functions and drive an MPPI controller with them",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on an environment; writes curves.csv, timing.csv,
    /// checkpoint.json per seed plus a combined curves.svg.
    Train(TrainArgs),
    /// Closed-loop rollout cost of a saved checkpoint over sampled initial
    /// conditions; writes eval.csv.
    Eval(EvalArgs),
    /// MPPI control runs, optionally warmstarted from a checkpoint; writes
    /// mpc_runs.csv.
    Mpc(MpcArgs),
    /// Re-render training curves from existing run directories; writes
    /// curves.svg + curves_summary.csv.
    Plot(PlotArgs),
    /// Sample a checkpoint's value function on a 2-D grid and contour it;
    /// writes levelset.csv + levelset.svg.
    Levelset(LevelsetArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Named preset (di_lyapunov, di_value, cp_balance_lyapunov,
    /// cp_swingup_value, twolink_value).
    #[arg(long)]
    preset: Option<String>,
    /// Environment name (di, cartpole_balance, cartpole_swingup, twolink);
    /// with --mode, an alternative to --preset.
    #[arg(long)]
    env: Option<String>,
    /// Loss program: value | lyapunov.
    #[arg(long)]
    mode: Option<String>,
    /// TOML config file; flags override file values.
    #[arg(long)]
    config: Option<String>,
    /// Override one config field, e.g. --set lr=0.01 --set widths=3,4,4,1.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Training seeds (comma separated); each seed trains once.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory (default runs/<preset-or-env>).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: String,
    /// Environment (default: the checkpoint's metadata).
    #[arg(long)]
    env: Option<String>,
    /// Number of sampled initial conditions.
    #[arg(long, default_value_t = 20)]
    ics: usize,
    /// Seed for the initial-condition draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollout horizon in seconds.
    #[arg(long, default_value_t = 3.0)]
    horizon: f64,
    /// Rollout step in seconds.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Output directory (default runs/eval).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct MpcArgs {
    /// Environment name.
    #[arg(long)]
    env: Option<String>,
    /// Checkpoint for the warmstarted arm.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Run both arms (vanilla and warmstarted) under the same settings.
    #[arg(long)]
    compare: bool,
    /// Run only the warmstarted arm (needs --checkpoint).
    #[arg(long)]
    warmstart: bool,
    /// TOML config file; flags override file values.
    #[arg(long)]
    config: Option<String>,
    /// Override one controller field, e.g. --set samples=128.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of sampled initial conditions shared by all runs.
    #[arg(long)]
    ics: Option<usize>,
    /// Seed for the initial-condition draw (separate from controller seeds).
    #[arg(long)]
    ic_seed: Option<u64>,
    /// Controller seeds (comma separated); each seed runs every arm.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory (default runs/mpc_<env>).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories holding curves.csv (directly or in seed_*/ subdirs).
    #[arg(long = "run", value_name = "DIR", required = true)]
    runs: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "plots")]
    out: String,
}

#[derive(Args)]
struct LevelsetArgs {
    /// Checkpoint whose value function is sampled.
    #[arg(long)]
    checkpoint: String,
    /// Environment (default: the checkpoint's metadata).
    #[arg(long)]
    env: Option<String>,
    /// Time at which to slice the value function.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Grid bounds low,high applied to both plotted axes.
    #[arg(long, value_delimiter = ',', default_values_t = [-2.0, 2.0])]
    bounds: Vec<f64>,
    /// Grid points per axis (≥ 3).
    #[arg(long, default_value_t = 101)]
    resolution: usize,
    /// Number of contour levels.
    #[arg(long, default_value_t = 8)]
    levels: usize,
    /// For systems with more than two states: the two state indices to plot
    /// (others held at the goal), e.g. --slice 0,1.
    #[arg(long, value_delimiter = ',')]
    slice: Option<Vec<usize>>,
    /// Overlay this many closed-loop trajectories from sampled initial
    /// conditions.
    #[arg(long, default_value_t = 0)]
    overlay: usize,
    /// Horizon for overlay rollouts, seconds.
    #[arg(long, default_value_t = 3.0)]
    horizon: f64,
    /// Step for overlay rollouts, seconds.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Output directory (default runs/levelset).
    #[arg(long)]
    out: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Mpc(a) => commands::mpc(a),
        Command::Plot(a) => commands::plot(a),
        Command::Levelset(a) => commands::levelset(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Io(_) => 1,
                CliError::Usage(_) => 2,
                CliError::Numeric(_) => 3,
            })
        }
    }
}
