//! Batch front end for the array simulator.
//!
//! Experiments are described by a JSON configuration (all keys optional);
//! `--seed`, `--out-dir`, and `--correction` override the corresponding
//! keys on any command. Exit codes: 0 ok, 1 usage or configuration error,
//! 2 simulation fault (headroom), 3 I/O error.

mod commands;
mod config;
mod errors;
mod report;
mod tensor;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use macdo::mapper::CorrectionMode;

use commands::SweepAxis;
use config::ExperimentConfig;
use errors::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "macdo",
    about = "Behavioral simulator of a charge-steering in-DRAM analog MAC array",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the correction mode: none, digital, digital+chop.
    #[arg(long, value_parser = parse_correction)]
    correction: Option<CorrectionMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tiled matrix product on the simulated array
    Gemm {
        /// Left operand tensor file (inputs)
        a: PathBuf,
        /// Right operand tensor file (weights)
        b: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Lower a convolution layer and run it on the array
    Conv {
        /// Activations tensor file, [C,H,W] or [B,C,H,W]
        activations: PathBuf,
        /// Filters tensor file, [M,C,R,R]
        filters: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Accumulate all 256 input x weight combinations and report the error
    /// surface
    MultSurface {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the synthetic workload across one swept axis and emit plot data
    Sweep {
        /// Axis to sweep
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values; axis-specific defaults when omitted
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Calibrate offset constants and write them for reuse
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn parse_correction(s: &str) -> Result<CorrectionMode, String> {
    match s {
        "none" => Ok(CorrectionMode::None),
        "digital" => Ok(CorrectionMode::Digital),
        "digital+chop" => Ok(CorrectionMode::DigitalChop),
        other => Err(format!(
            "invalid correction '{other}', expected none, digital, or digital+chop"
        )),
    }
}

fn load_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let body = fs::read_to_string(path)
                .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
            serde_json::from_str(&body)
                .map_err(|e| CliError::Usage(format!("parsing {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out_dir) = &common.out_dir {
        cfg.out_dir = out_dir.clone();
    }
    if let Some(correction) = common.correction {
        cfg.correction = correction;
    }
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gemm { a, b, common } => {
            let cfg = load_config(common)?;
            commands::cmd_gemm(&cfg, a, b)
        }
        Command::Conv {
            activations,
            filters,
            common,
        } => {
            let cfg = load_config(common)?;
            commands::cmd_conv(&cfg, activations, filters)
        }
        Command::MultSurface { common } => {
            let cfg = load_config(common)?;
            commands::cmd_mult_surface(&cfg)
        }
        Command::Sweep {
            axis,
            values,
            common,
        } => {
            let cfg = load_config(common)?;
            commands::cmd_sweep(&cfg, *axis, values)
        }
        Command::Calibrate { common } => {
            let cfg = load_config(common)?;
            commands::cmd_calibrate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
