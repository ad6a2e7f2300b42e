//! `epiqsim` batch front end.
//!
//! Exit status: 0 on success, 1 for configuration or I/O problems, 2 when the
//! numerics fail (the message carries the step index for integrations).

mod commands;
mod demo;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "epiqsim", version, about = "Estimation-error deformations of quantum mechanics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Lambda,
    Alpha,
    Beta,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the initial state and write the trajectory and snapshots.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uncertainty report for the initial state.
    Uncertainty {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Monte Carlo estimator suite.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write every sample to samples.csv.
        #[arg(long)]
        raw: bool,
    },
    /// Estimation-independence verdict for a family, e.g. `powerlaw:1.0:0.5`.
    Classify {
        #[arg(long)]
        family: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uncertainty scalars over a parameter range `a:b:n`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single- and double-slit preparations evolved freely.
    DemoSlits {
        #[arg(long)]
        family: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        t_final: f64,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("EPIQSIM_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| epiqsim::Error::Config(format!("EPIQSIM_THREADS must be a positive integer, got '{raw}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out),
        Command::Uncertainty { config, out, format } => commands::uncertainty(&config, out.as_deref(), format),
        Command::Ensemble { config, out, n, seed, raw } => commands::ensemble(&config, &out, n, seed, raw),
        Command::Classify { family, out } => commands::classify(&family, out.as_deref()),
        Command::Sweep { config, param, range, out } => commands::sweep(&config, param, &range, &out),
        Command::DemoSlits {
            family,
            out,
            t_final,
            separation,
            sigma,
        } => demo::demo_slits(&family, &out, t_final, separation, sigma),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<epiqsim::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
