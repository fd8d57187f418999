//! Command-line experiment runner for the `ipid-qcd` solvers.
//!
//! Subcommands read a flat TOML experiment config (see [`config`]) or the
//! name of a bundled one, write CSV artifacts to `--out-dir`, and print a
//! summary. Exit codes: 0 success, 1 runtime error, 2 usage error, 3 config
//! or instance parse error, 4 value iteration did not converge.

pub mod artifacts;
pub mod bundled;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Outcome, Overrides, PolicyArg, Target, EXIT_NOT_CONVERGED};

#[derive(Debug, Parser)]
#[command(name = "ipid-qcd", version, about = "Bayesian quickest change detection for periodic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Random seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of simulated paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Belief grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Value-iteration tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Directory for CSV artifacts [default: config `out_dir`, else ./out].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl From<CommonArgs> for Overrides {
    fn from(a: CommonArgs) -> Self {
        Overrides {
            seed: a.seed,
            paths: a.paths,
            grid: a.grid,
            tol: a.tol,
            out_dir: a.out_dir,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the stopping problem by value iteration and extract thresholds.
    Solve {
        /// Config file, or a bundled config name such as `t2_paper`.
        #[arg(long)]
        config: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the Bayes cost of a stopping rule by simulation.
    Simulate {
        #[arg(long)]
        config: String,
        /// `optimal`, a single threshold, or one threshold per stage (comma separated).
        #[arg(long, default_value = "optimal")]
        policy: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate every single-threshold rule on the default threshold grid.
    Sweep {
        #[arg(long)]
        config: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Delay and false-alarm estimates at A = 1 - alpha, plus one belief trace.
    Tradeoff {
        #[arg(long, default_value = "fig3")]
        config: String,
        /// False-alarm targets (comma separated or repeated) [default: config `alphas`].
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Regenerate a published table or figure from the bundled configs.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve a periodic MDP given in the plain-text instance format.
    MdpSolve {
        /// Instance file, or `three_state` for the bundled example.
        #[arg(default_value = "three_state")]
        instance: String,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        max_cycles: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

pub fn execute(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Solve { config, common } => commands::solve(&config, &common.into()),
        Command::Simulate {
            config,
            policy,
            common,
        } => commands::simulate(&config, &PolicyArg::parse(&policy)?, &common.into()),
        Command::Sweep { config, common } => commands::sweep(&config, &common.into()),
        Command::Tradeoff {
            config,
            alpha,
            common,
        } => commands::tradeoff(&config, &alpha, &common.into()),
        Command::Reproduce { target, common } => commands::reproduce(target, &common.into()),
        Command::MdpSolve {
            instance,
            tol,
            max_cycles,
            out_dir,
        } => commands::mdp_solve(&instance, tol, max_cycles, out_dir.as_deref()),
    }
}

/// Parses `args`, runs the command, and maps the result to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(outcome) if outcome.converged => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("error: value iteration did not converge (artifacts were still written)");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
