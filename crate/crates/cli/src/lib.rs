//! Experiment runner for adaptive spiking networks: TOML configuration,
//! training runs with metric/raster/trajectory exports and versioned
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use run::{resume, run, RunOutcome, Summary};

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "lsnn", version, about = "Train and inspect adaptive spiking networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config file.
    Run {
        config: PathBuf,
        /// Override one config key, e.g. `--set experiment.training.iterations=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Continue training from a checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Simulate a checkpointed network on a spike input CSV and write its
    /// raster as `t_ms,neuron` rows.
    ExportRaster {
        checkpoint: PathBuf,
        input: PathBuf,
        /// Output file (standard output when omitted).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check a config file and report every problem.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, set } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            let out = run::run(&cfg)?;
            println!("{}: iteration {}, {}", out.output_dir.display(), out.iteration, out.summary);
        }
        Command::Resume { checkpoint, set } => {
            let out = run::resume(&checkpoint, &set)?;
            println!("{}: iteration {}, {}", out.output_dir.display(), out.iteration, out.summary);
        }
        Command::ExportRaster { checkpoint, input, output } => match output {
            Some(path) => {
                let f = std::fs::File::create(&path).map_err(error::CliError::io(&path))?;
                run::export_raster(&checkpoint, &input, &mut std::io::BufWriter::new(f))?;
            }
            None => run::export_raster(&checkpoint, &input, &mut std::io::stdout().lock())?,
        },
        Command::Validate { config, set } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            cfg.validate()?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
