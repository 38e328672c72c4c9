use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use refugesim_cli::commands;
use refugesim_cli::config::{load_config, ResolvedConfig};
use refugesim_cli::exit_code;

#[derive(Parser)]
#[command(
    name = "refugesim",
    about = "Reaction-diffusion simulation and spectral analysis of vector-borne crop epidemics under predator refuge layouts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file: key=value text or a resolved JSON sidecar.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Replace the config's parameters with a named preset.
    #[arg(long, value_parser = ["extinction", "persistence"])]
    preset: Option<String>,
    /// Override the time-stepping scheme.
    #[arg(long, value_parser = ["semi", "semi-implicit", "explicit"])]
    scheme: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation: time series, snapshots, harvest and regime report.
    Simulate(Common),
    /// Principal eigenvalues of the three linearized operators.
    Eig {
        #[command(flatten)]
        common: Common,
        /// Cross-check against a dense eigensolver (small grids only).
        #[arg(long)]
        oracle: bool,
    },
    /// Harvest against refuge frequency at fixed total area.
    SweepFrequency(Common),
    /// Harvest against uniformly mixed refuge fraction.
    SweepQuantity(Common),
    /// Rigorous healthy-fraction bounds for the configured initial data.
    Bounds(Common),
    /// Render snapshot fields as PGM images.
    Render {
        /// Snapshot directory holding manifest.json.
        #[arg(long)]
        snapshots: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> refugesim::Result<ResolvedConfig> {
    let mut cfg = load_config(&common.config)?;
    cfg.apply_overrides(common.preset.as_deref(), common.scheme.as_deref())?;
    Ok(cfg)
}

fn run(cli: Cli) -> refugesim::Result<()> {
    match &cli.command {
        Command::Simulate(c) => commands::cmd_simulate(&load(c)?, &c.out),
        Command::Eig { common, oracle } => commands::cmd_eig(&load(common)?, &common.out, *oracle),
        Command::SweepFrequency(c) => commands::cmd_sweep_frequency(&load(c)?, &c.out),
        Command::SweepQuantity(c) => commands::cmd_sweep_quantity(&load(c)?, &c.out),
        Command::Bounds(c) => commands::cmd_bounds(&load(c)?, &c.out),
        Command::Render { snapshots, out } => commands::cmd_render(snapshots, out),
    }
}

fn main() -> ExitCode {
    // Usage errors are configuration errors; clap's default exit code (2)
    // is reserved for solver failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
