use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phasefield_cli::{compare, run_file, CliError, ExperimentConfig, FieldSets};

#[derive(Parser)]
#[command(
    name = "pfonet",
    version,
    about = "Run phase-field gradient-flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Run directory (overrides the config and the output root).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    ValidateConfig { config: PathBuf },
    /// Nodewise MSE, r² and max error between field sets of two runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value = "prediction")]
        set_a: String,
        #[arg(long, default_value = "prediction")]
        set_b: String,
    },
    /// Write a run's field sets as tidy CSV.
    Export {
        run: PathBuf,
        /// Output file (default: <run>/fields.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output } => {
            let outcome = run_file(&config, output.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            eprintln!("artifacts in {}", outcome.dir.display());
            if !outcome.failed.is_empty() {
                return Err(CliError::Threshold(outcome.failed.join(", ")));
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({})", config.display(), cfg.experiment.as_str());
        }
        Command::Compare {
            run_a,
            run_b,
            set_a,
            set_b,
        } => {
            let report = compare(&run_a, &set_a, &run_b, &set_b)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Export { run, out } => {
            let sets = FieldSets::load(&run)?;
            let path = out.unwrap_or_else(|| run.join("fields.csv"));
            sets.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pfonet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
