//! Command-line front end for the matchfield simulator.
//!
//! Exit codes: 0 success, 2 scenario validation failure, 3 runtime
//! infeasibility (inconsistent matching targets or rounding), 1 other
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use matchfield::harness::{self, OutputFormat, Overrides};

#[derive(Parser)]
#[command(
    name = "matchfield",
    about = "Random-matching population dynamics: mean-field recursion, per-agent \
             transition matrices, and finite-N Monte Carlo with cross-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML)
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,

    /// Master seed override
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Replication count override
    #[arg(long, value_name = "N")]
    replications: Option<usize>,

    /// Horizon override
    #[arg(long, value_name = "N")]
    periods: Option<usize>,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Default)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario file
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Iterate the mean-field recursion and export the trajectory
    Meanfield {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build per-period transition matrices and their mean-field residuals
    Transition {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the agent simulation and export stage snapshots
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run mean-field and simulation over shared environment paths and
    /// export distance reports
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Report format
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            replications: self.replications,
            periods: self.periods,
        }
    }
}

fn list_outputs(files: &[PathBuf]) {
    for file in files {
        println!("wrote {}", file.display());
    }
}

fn run() -> matchfield::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { common } => {
            let scenario = harness::cmd_validate(&common.scenario)?;
            println!(
                "ok: {} types, horizon {}, population {}, {} replication(s), {} environment state(s), {} intensities",
                scenario.space().types(),
                scenario.horizon(),
                scenario.population(),
                scenario.replications(),
                scenario.environment().states(),
                scenario.intensities().mode_name(),
            );
        }
        Command::Meanfield { common, out } => {
            let scenario = harness::load_scenario(&common.scenario, &common.overrides())?;
            list_outputs(&harness::cmd_meanfield(&scenario, &out.out)?);
        }
        Command::Transition { common, out } => {
            let scenario = harness::load_scenario(&common.scenario, &common.overrides())?;
            list_outputs(&harness::cmd_transition(&scenario, &out.out)?);
        }
        Command::Simulate { common, out } => {
            let scenario = harness::load_scenario(&common.scenario, &common.overrides())?;
            list_outputs(&harness::cmd_simulate(&scenario, &out.out)?);
        }
        Command::Compare {
            common,
            out,
            format,
        } => {
            let scenario = harness::load_scenario(&common.scenario, &common.overrides())?;
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            list_outputs(&harness::cmd_compare(&scenario, &out.out, format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
