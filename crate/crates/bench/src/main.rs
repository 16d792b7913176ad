//! `bench`: train and evaluate mutual information estimators on the
//! correlated Gaussian task.
//!
//! Exit codes: 0 on success (a diverged run is still a success), 1 for
//! configuration errors, 2 for I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rjmi::estimators::{EstimatorKind, MIN_ORACLE_SAMPLES};
use rjmi::gaussian::GaussianTaskConfig;
use rjmi::harness::{
    oracle_suite, parse_config, run_and_write, run_sweep, summaries_to_csv, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Mutual information estimator benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one estimator and write its records and summary.
    Run(Box<RunArgs>),
    /// Evaluate every estimator at the exact log density ratio.
    Oracle(OracleArgs),
    /// Run the estimator x correlation grid from a config file.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Summary window in steps.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        [
            ("estimator", &self.estimator),
            ("dim", &self.dim),
            ("nu", &self.nu),
            ("steps", &self.steps),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("c", &self.c),
            ("a", &self.a),
            ("b", &self.b),
            ("tau", &self.tau),
            ("lr", &self.lr),
            ("k", &self.k),
            ("out", &self.out),
            ("workers", &self.workers),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

fn read_config(path: &PathBuf) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn run(args: &RunArgs) -> Result<(), HarnessError> {
    let text = args.config.as_ref().map(read_config).transpose()?;
    let config = parse_config(text.as_deref(), &args.overrides())?;
    let out = run_and_write(&config)?;
    print!("{}", summaries_to_csv(std::slice::from_ref(&out.summary)));
    if out.summary.diverged {
        eprintln!("warning: run diverged");
    }
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<(), HarnessError> {
    if args.samples < MIN_ORACLE_SAMPLES {
        return Err(HarnessError::Config(format!(
            "samples must be at least {MIN_ORACLE_SAMPLES}"
        )));
    }
    let task = GaussianTaskConfig::new(args.dim, args.nu, args.seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let defaults = parse_config(None, &[])?;
    let kinds: Vec<EstimatorKind> = defaults.sweep_estimators;
    let report = oracle_suite(&task, args.samples, &kinds, &defaults.sweep_nus)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), HarnessError> {
    let text = read_config(&args.config)?;
    let overrides: Vec<(String, String)> = [("out", &args.out), ("workers", &args.workers)]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect();
    let config = parse_config(Some(&text), &overrides)?;
    let summaries = run_sweep(&config)?;
    print!("{}", summaries_to_csv(&summaries));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are configuration errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Oracle(args) => oracle(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
