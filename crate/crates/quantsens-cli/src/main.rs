//! `quantsens`: simulate loss models, estimate stress sensitivities, check
//! them against finite differences and rerun the bundled case studies.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "quantsens", version, about)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "QUANTSENS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write them as CSV with a JSON sidecar.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Estimate sensitivities for every target/stress pair and risk measure.
    Sens {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "marginal")]
        mode: SensMode,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        rm: RiskFlags,
    },
    /// Compare estimates with finite differences (exit 1 on disagreement).
    Oracle {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "marginal")]
        mode: SensMode,
        /// Strictly decreasing step sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
        /// Scenarios for the finite differences.
        #[arg(long, default_value_t = quantsens::oracle::DEFAULT_FD_SCENARIOS)]
        fd_n: usize,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        rm: RiskFlags,
    },
    /// Reproduce a bundled case study.
    Casestudy {
        #[arg(value_enum)]
        which: Study,
        /// Small smoke-test sizes.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config without running anything.
    Validate { config: PathBuf },
}

/// Flags that override the config file.
#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Given any of these, they replace the config's risk measures.
#[derive(Args)]
struct RiskFlags {
    #[arg(long, value_enum)]
    rm: Option<RiskKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SensMode {
    Marginal,
    Cascade,
    Discrete,
}

#[derive(Clone, Copy, ValueEnum)]
enum RiskKind {
    Var,
    Es,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Reinsurance,
    Compound,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable input; exit code 2.
    Config(String),
    /// The computation failed; exit code 3.
    Numerical(String),
}

impl From<quantsens::Error> for CliError {
    fn from(e: quantsens::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}
