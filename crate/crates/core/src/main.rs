use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mjfilter::harness::experiments;
use mjfilter::harness::ExperimentConfig;
use mjfilter::FilterError;

#[derive(Parser)]
#[command(name = "mjfilter", version, about = "Filters for Markov jump signals in white noise")]
struct Cli {
    /// JSON experiment config; the telegraph benchmark is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a signal path and its observations.
    Simulate,
    /// Run the configured filter scheme.
    Filter,
    /// Discrepancies between scheme pairs under mesh halving.
    Convergence,
    /// Decide the correction sign and the normalized-filter variant.
    Adjudicate,
    /// Predict from the terminal state of a previous `filter` run.
    Predict,
    /// Model checks, tower property and path-space oracle.
    Validate {
        #[arg(long, default_value_t = 2000)]
        replicas: usize,
    },
}

const VALIDATION_FAILURE: u8 = 2;
const THRESHOLD_FAILURE: u8 = 3;

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(dt) = cli.dt {
        config.dt = dt;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli, config: &ExperimentConfig) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Simulate => {
            let out = experiments::run_simulate(config)?;
            println!("{} jumps, {} steps", out.path.jumps().len(), out.grid.n_steps());
        }
        Command::Filter => {
            let out = experiments::run_filter(config)?;
            println!("{}", serde_json::to_string(&out.report)?);
        }
        Command::Convergence => {
            for s in experiments::run_convergence(config)? {
                let orders: Vec<String> = s.orders().iter().map(|o| format!("{o:.2}")).collect();
                println!("{}: orders [{}]", s.label, orders.join(", "));
            }
        }
        Command::Adjudicate => {
            let report = experiments::run_adjudicate(config)?;
            println!("{}", serde_json::json!({ "verdict": report.verdict }));
            if !report.is_conclusive() {
                return Ok(THRESHOLD_FAILURE);
            }
        }
        Command::Predict => {
            let rows = experiments::run_predict(config)?;
            println!("{} predictions", rows.len());
        }
        Command::Validate { replicas } => {
            let outcome = experiments::run_validate(config, *replicas)?;
            println!(
                "z-scores {:?}, mse filter {:.4} vs constant {:.4}",
                outcome.z_scores, outcome.mse_filter, outcome.mse_const
            );
            for f in &outcome.failures {
                eprintln!("FAIL {f}");
            }
            if !outcome.passed() {
                return Ok(THRESHOLD_FAILURE);
            }
        }
    }
    Ok(0)
}

fn is_validation_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<FilterError>(),
            Some(
                FilterError::InvalidModel(_)
                    | FilterError::InvalidParameter(_)
                    | FilterError::Reducible { .. }
                    | FilterError::SchemeMismatch { .. }
                    | FilterError::Json(_)
            )
        )
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|config| run(&cli, &config));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation_error(&err) {
                ExitCode::from(VALIDATION_FAILURE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
