use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mflab_cli::calibrate::{calibrate, DEFAULT_SAMPLES, DEFAULT_SUITE};
use mflab_cli::config::ScenarioConfig;
use mflab_cli::report::{Report, ReportFormat};
use mflab_cli::scenario::{run_scenario, sweep};
use mflab_core::calib::{workspace_constants_path, CalibrationConstants};
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for weakly coupled Coulomb particles and 2D Euler on
/// the torus.
#[derive(Parser)]
#[command(name = "mflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single (N, theta) scenario from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the initial-data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Cartesian (N, theta, seed) sweep of a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce the frozen-constant file from a calibration suite.
    Calibrate {
        #[arg(long, default_value = DEFAULT_SUITE)]
        suite: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit reports from a previous run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // config errors exit 2, numerical failures exit 3
            let code = if e.is_config { 2 } else { 3 };
            if !e.is_config {
                let diag = serde_json::json!({
                    "error": format!("{:#}", e.source),
                    "kind": "numerical",
                });
                eprintln!("{diag}");
            } else {
                eprintln!("config error: {:#}", e.source);
            }
            ExitCode::from(code)
        }
    }
}

struct CliError {
    source: anyhow::Error,
    is_config: bool,
}

fn config_err(e: anyhow::Error) -> CliError {
    CliError { source: e, is_config: true }
}

fn numeric_err(e: anyhow::Error) -> CliError {
    CliError { source: e, is_config: false }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let config = ScenarioConfig::load(&config).map_err(config_err)?;
            let constants = load_constants();
            let report =
                run_scenario(&config, seed, constants.as_ref()).map_err(numeric_err)?;
            let dir = output_dir(&config, out);
            report
                .emit(&dir, &[ReportFormat::Jsonl, ReportFormat::Csv, ReportFormat::Svg])
                .map_err(numeric_err)?;
            println!("run complete: {} rows -> {}", report.rows.len(), dir.display());
            Ok(())
        }
        Command::Sweep { config, out } => {
            let config = ScenarioConfig::load(&config).map_err(config_err)?;
            let constants = load_constants();
            let report = sweep(&config, constants.as_ref()).map_err(numeric_err)?;
            let dir = output_dir(&config, out);
            report
                .emit(&dir, &[ReportFormat::Jsonl, ReportFormat::Csv, ReportFormat::Svg])
                .map_err(numeric_err)?;
            for failure in &report.failures {
                eprintln!(
                    "cell failure: N={} theta={} seed={}: {}",
                    failure.n, failure.theta, failure.seed, failure.error
                );
            }
            println!(
                "sweep complete: {} rows, {} failed cells -> {}",
                report.rows.len(),
                report.failures.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Calibrate { suite, samples, out } => {
            let samples = samples.unwrap_or(DEFAULT_SAMPLES);
            let constants = calibrate(&suite, samples).map_err(numeric_err)?;
            let path = out.unwrap_or_else(workspace_constants_path);
            constants
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(numeric_err)?;
            println!("calibrated {suite} suite ({samples} samples) -> {}", path.display());
            println!("{}", serde_json::to_string_pretty(&constants).unwrap());
            Ok(())
        }
        Command::Report { input, format } => {
            let format: ReportFormat = format.parse().map_err(config_err)?;
            let report =
                Report::read_jsonl(&input.join("report.jsonl")).map_err(numeric_err)?;
            report.emit(&input, &[format]).map_err(numeric_err)?;
            println!("re-emitted {format:?} into {}", input.display());
            Ok(())
        }
    }
}

fn load_constants() -> Option<CalibrationConstants> {
    let path = workspace_constants_path();
    match CalibrationConstants::load(&path) {
        Ok(c) => Some(c),
        Err(_) => {
            eprintln!(
                "warning: no calibration constants at {}; Gronwall envelopes will be NaN \
                 (run `mflab calibrate`)",
                path.display()
            );
            None
        }
    }
}

fn output_dir(config: &ScenarioConfig, cli_out: Option<PathBuf>) -> PathBuf {
    cli_out
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mflab-out"))
}
