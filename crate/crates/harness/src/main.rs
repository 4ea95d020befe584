use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use jes_core::benchmarks::{gp_task_length_scale, SyntheticFunction};
use jes_harness::config::ExperimentConfig;
use jes_harness::experiment::{manifest_path, run_experiment, write_outcome};
use jes_harness::study::{approx_study, write_study, DEFAULT_NOISE_RATIOS, DEFAULT_N_MC, DEFAULT_QUANTILES};
use jes_harness::summary::summarize;

#[derive(Parser)]
#[command(name = "jes-bench", version, about = "Bayesian optimization benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task × acquisition × seed in a config and write a CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "BO_WORKERS")]
        workers: Option<usize>,
    },
    /// Moment-matching vs Monte Carlo entropy reduction over a grid.
    ApproxStudy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_RATIOS)]
        noise_ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QUANTILES)]
        quantiles: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_N_MC)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per (task, acq, iteration) log-regret statistics as JSON.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the available benchmark tasks.
    ListTasks,
}

fn run(config: PathBuf, out: Option<PathBuf>, workers: Option<usize>) -> Result<ExitCode> {
    let cfg = ExperimentConfig::from_path(&config)?;
    let out = out
        .or_else(|| cfg.output.clone())
        .context("no output path: pass --out or set `output` in the config")?;
    let workers = workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run_experiment(&cfg, workers)?;
    write_outcome(&out, &outcome)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if outcome.is_success() {
        eprintln!("wrote {} rows to {}", outcome.rows.len(), out.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("failed: {}/{}/{}: {}", f.task, f.acq, f.seed, f.error);
        }
        eprintln!(
            "{} runs failed; partial results in {}, manifest in {}",
            outcome.failures.len(),
            out.display(),
            manifest_path(&out).display()
        );
        Ok(ExitCode::FAILURE)
    }
}

fn list_tasks() {
    println!("{:<14} {:>4}  bounds", "task", "dim");
    for f in SyntheticFunction::ALL {
        let b = f.bounds();
        let ranges: Vec<String> = (0..b.dim()).map(|d| format!("[{}, {}]", b.lower()[d], b.upper()[d])).collect();
        println!("{:<14} {:>4}  {}", f.name(), f.dim(), ranges.join(" "));
    }
    for dim in [2, 4, 6, 12] {
        let ls = gp_task_length_scale(dim).expect("supported dimension");
        println!("{:<14} {:>4}  [0, 1]^{dim}, length scale {ls}", format!("gp_sample{dim}d"), dim);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, workers } => run(config, out, workers),
        Command::ApproxStudy {
            out,
            noise_ratios,
            quantiles,
            n_mc,
            seed,
        } => approx_study(&noise_ratios, &quantiles, n_mc, seed)
            .and_then(|cells| write_study(&out, &cells))
            .map(|()| ExitCode::SUCCESS),
        Command::Summarize { input, out } => summarize(&input).and_then(|s| {
            std::fs::write(&out, serde_json::to_string_pretty(&s)?).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }),
        Command::ListTasks => {
            list_tasks();
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
