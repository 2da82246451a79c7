// `!(x < y)` rejects NaN flags alongside out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use commands::{DecayArgs, OptimizeArgs, Outcome, SimulateArgs, SweepArgs};
use error::CliError;
use report::{ErrorInfo, Inputs, RunReport, Timing};

/// Stability analysis and optimal tuning of positive semi-Markov jump
/// linear systems.
#[derive(Debug, Parser)]
#[command(name = "smjls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write a JSON run report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Print the JSON run report on stdout instead of the text summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decay rate of the mean state norm at a parameter point.
    DecayRate(DecayArgs),
    /// Budget-constrained rate maximization or rate-constrained cost minimization.
    Optimize(OptimizeArgs),
    /// Monte Carlo ensemble with switch logs and an empirical rate.
    Simulate(SimulateArgs),
    /// Bet-hedging parameter sweeps.
    Sweep(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::DecayRate(_) => "decay-rate",
            Command::Optimize(_) => "optimize",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
        }
    }

    fn config_path(&self) -> &Path {
        match self {
            Command::DecayRate(a) => &a.config,
            Command::Optimize(a) => &a.config,
            Command::Simulate(a) => &a.config,
            Command::Sweep(a) => &a.config,
        }
    }

    fn flags(&self) -> serde_json::Value {
        match self {
            Command::DecayRate(a) => serde_json::to_value(a),
            Command::Optimize(a) => serde_json::to_value(a),
            Command::Simulate(a) => serde_json::to_value(a),
            Command::Sweep(a) => serde_json::to_value(a),
        }
        .unwrap_or(serde_json::Value::Null)
    }
}

fn run(command: &Command, config_text: &mut Option<String>) -> Result<Outcome, CliError> {
    let cfg = config::load(command.config_path())?;
    *config_text = Some(cfg.text.clone());
    log::info!("loaded {}", cfg.path.display());
    match command {
        Command::DecayRate(a) => commands::decay_rate_cmd(&cfg, a),
        Command::Optimize(a) => commands::optimize_cmd(&cfg, a),
        Command::Simulate(a) => commands::simulate_cmd(&cfg, a),
        Command::Sweep(a) => commands::sweep_cmd(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());

    let mut config_text = None;
    let outcome = run(&cli.command, &mut config_text);

    let inputs = Inputs {
        argv: std::env::args().skip(1).collect(),
        config_path: Some(cli.command.config_path().display().to_string()),
        config_text,
        flags: cli.command.flags(),
    };
    let timing = Timing {
        started_unix_ms,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    let mut report = RunReport::new(cli.command.name(), inputs, timing);

    let failure = match outcome {
        Ok(mut out) => {
            report.results = std::mem::take(&mut out.results);
            report.diagnostics = std::mem::take(&mut out.diagnostics);
            report.seed = out.seed;
            report.outputs = std::mem::take(&mut out.outputs);
            if !cli.json {
                if let Some(csv) = &out.stdout_csv {
                    print!("{csv}");
                } else {
                    for line in &out.lines {
                        println!("{line}");
                    }
                }
            }
            out.failure
        }
        Err(e) => Some(e),
    };
    if let Some(e) = &failure {
        report.exit_code = e.exit_code();
        report.error = Some(ErrorInfo {
            kind: e.kind().into(),
            message: e.to_string(),
        });
        eprintln!("error: {e}");
    }

    if cli.json {
        match serde_json::to_string_pretty(&report) {
            Ok(text) => println!("{text}"),
            Err(e) => eprintln!("error: cannot serialize report: {e}"),
        }
    }
    if let Some(path) = &cli.report {
        if let Err(e) = report.write(path) {
            eprintln!("error: {e}");
            if failure.is_none() {
                return e.exit();
            }
        }
    }
    match failure {
        Some(e) => e.exit(),
        None => ExitCode::SUCCESS,
    }
}
