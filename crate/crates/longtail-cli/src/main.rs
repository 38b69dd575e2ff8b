//! Command-line driver for the long-tail loss laboratory.
//!
//! Verbs: `run` (single run or sweep), `compare` (side-by-side losses),
//! `gen-data` (export a dataset), `check-grad` (finite-difference suite).
//! Exit codes: 0 success, 2 config error, 3 training divergence, 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longtail::experiment::{self, ExperimentConfig, RunSummary};
use longtail::gradcheck;

#[derive(Parser)]
#[command(name = "longtail", version, about = "Long-tail classification loss laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent sweep points (1 = sequential).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured loss, once or over a sweep.
    Run(RunArgs),
    /// Train every loss in the config's compare list on the same data.
    Compare(RunArgs),
    /// Export the configured synthetic dataset as columnar text.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Destination file for the dataset.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check analytic gradients of every loss family against central
    /// finite differences and print the worst relative error.
    CheckGrad {
        /// Random trials per family.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, longtail::ExperimentError> {
    match path {
        Some(path) => ExperimentConfig::from_file(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_summary(summary: &RunSummary) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "absent".to_string(),
    };
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "run", "m_ap", "ap_r", "ap_c", "ap_f");
    for r in &summary.results {
        println!(
            "{:<24} {:>8} {:>8} {:>8} {:>8}",
            r.name,
            fmt(r.report.m_ap),
            fmt(r.report.ap_rare),
            fmt(r.report.ap_common),
            fmt(r.report.ap_frequent)
        );
    }
    println!("reports written to {}", summary.output.display());
}

fn dispatch(cli: Cli) -> Result<(), longtail::ExperimentError> {
    match cli.command {
        Command::Run(args) => {
            let config = load_config(&args.config)?.resolved(args.seed, args.out);
            let summary = experiment::run(&config, args.jobs.max(1))?;
            print_summary(&summary);
        }
        Command::Compare(args) => {
            let config = load_config(&args.config)?.resolved(args.seed, args.out);
            let summary = experiment::compare(&config, args.jobs.max(1))?;
            print_summary(&summary);
        }
        Command::GenData { config, out, seed } => {
            let config = load_config(&config)?.resolved(seed, None);
            experiment::gen_data(&config, &out)?;
            println!("dataset written to {}", out.display());
        }
        Command::CheckGrad { trials, seed } => {
            let reports = gradcheck::check_all_families(trials, seed);
            let mut worst = 0.0f64;
            for r in &reports {
                println!(
                    "{:<14} trials={:<6} max_rel_err={:.3e}",
                    r.family, r.trials, r.max_rel_err
                );
                worst = worst.max(r.max_rel_err);
            }
            if worst >= 1e-5 {
                return Err(longtail::ExperimentError::Config {
                    field: "check-grad".into(),
                    reason: format!("worst relative error {worst:.3e} exceeds 1e-5"),
                });
            }
            println!("all families within 1e-5");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
