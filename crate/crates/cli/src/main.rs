//! `transqr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod standardize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transqr::Error;

#[derive(Debug, Parser)]
#[command(
    name = "transqr",
    version,
    about = "Transfer learning for high-dimensional quantile regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment described by a config file.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit l1-penalized smoothed quantile regression on one CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        standardize: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Two-step transfer estimator with every listed source.
    Transfer {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Detect transferable sources, then run the transfer estimator on them.
    Detect {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Communication-efficient transfer with each CSV as one site.
    Distributed {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Time the configured experiment on the default pool and on one thread.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    target: PathBuf,
    /// Source dataset; repeat for several.
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
    /// Centre and scale covariates by the target's column statistics;
    /// coefficients are reported on the original scale.
    #[arg(long)]
    standardize: bool,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Number of distributed rounds.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Bandwidth for both estimation steps.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Penalty level for both estimation steps (skips selection).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 1,
        Error::Csv { .. }
        | Error::InvalidData(_)
        | Error::DimensionMismatch(_)
        | Error::Io(_)
        | Error::Codec(_) => 2,
        Error::NumericalBlowUp { .. } => 3,
        Error::GridFit { source, .. }
        | Error::SourceFit { source, .. }
        | Error::Round { source, .. } => exit_code(source),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub fn pool_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --jobs {n} ignored");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate { common } => {
            set_jobs(common.jobs)?;
            commands::simulate(common)
        }
        Command::Fit {
            data,
            standardize,
            common,
        } => {
            set_jobs(common.jobs)?;
            commands::fit(common, data, *standardize)
        }
        Command::Transfer { inputs, common } => {
            set_jobs(common.jobs)?;
            commands::transfer(common, &inputs.target, &inputs.sources, inputs.standardize)
        }
        Command::Detect { inputs, common } => {
            set_jobs(common.jobs)?;
            commands::detect(common, &inputs.target, &inputs.sources, inputs.standardize)
        }
        Command::Distributed { inputs, common } => {
            set_jobs(common.jobs)?;
            commands::distributed(common, &inputs.target, &inputs.sources, inputs.standardize)
        }
        Command::Bench { common } => {
            set_jobs(common.jobs)?;
            commands::bench(common)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
