//! Runs every (task, acquisition, seed) combination of a config and writes
//! one CSV row per iteration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use jes_core::benchmarks::Task;
use jes_core::engine::{run_bo, AcquisitionKind, BoConfig, Trace};
use jes_core::hyper::HyperMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const CSV_HEADER: [&str; 10] = [
    "task",
    "acq",
    "seed",
    "iteration",
    "branch",
    "x",
    "y",
    "simple_regret",
    "inference_regret",
    "acq_time_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub acq: String,
    pub seed: u64,
    pub iteration: usize,
    pub branch: String,
    /// Coordinates joined by `;`.
    pub x: String,
    pub y: f64,
    pub simple_regret: f64,
    pub inference_regret: f64,
    pub acq_time_ms: f64,
}

pub fn join_coords(x: &[f64]) -> String {
    x.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub fn trace_rows(task: &str, acq: AcquisitionKind, seed: u64, trace: &Trace) -> Vec<ResultRow> {
    trace
        .rows
        .iter()
        .map(|r| ResultRow {
            task: task.to_string(),
            acq: acq.name().to_string(),
            seed,
            iteration: r.iteration,
            branch: r.branch.name().to_string(),
            x: join_coords(&r.x),
            y: r.y,
            simple_regret: r.simple_regret,
            inference_regret: r.inference_regret,
            acq_time_ms: r.acq_time_ms,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub task: String,
    pub acq: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RunFailure>,
    pub warnings: Vec<String>,
}

impl ExperimentOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The run configuration for one task, with fixed-mode hyperparameters taken
/// from the task's generating kernel when the config leaves them unset.
pub fn config_for(base: &BoConfig, task: &Task, acquisition: AcquisitionKind) -> Result<BoConfig> {
    let mut cfg = base.clone();
    cfg.acquisition = acquisition;
    if cfg.hyper.mode == HyperMode::Fixed && cfg.hyper.fixed.is_none() {
        cfg.hyper.fixed = Some(
            task.kernel_params()
                .ok_or_else(|| anyhow!("task {} has no generating kernel; give fixed hyperparameters explicitly", task.name()))?,
        );
    }
    Ok(cfg)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")
}

/// Runs all combinations on `workers` threads. Rows come back in
/// (task, acquisition, seed) order whatever the completion order.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentOutcome> {
    config.validate()?;
    let pool = pool(workers)?;
    let tasks: Vec<Task> = pool.install(|| {
        config
            .tasks
            .par_iter()
            .map(|spec| spec.build().with_context(|| format!("building task {spec:?}")))
            .collect::<Result<_>>()
    })?;
    let seeds = config.seeds.to_vec();
    let mut jobs: Vec<(&Task, AcquisitionKind, u64)> = Vec::new();
    for task in &tasks {
        for &acq in &config.acquisitions {
            jobs.extend(seeds.iter().map(|&s| (task, acq, s)));
        }
    }

    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(task, acq, seed)| {
                let trace = config_for(&config.bo, task, acq).and_then(|cfg| Ok(run_bo(task, &cfg, seed)?));
                (task.name(), acq, seed, trace)
            })
            .collect()
    });

    let mut outcome = ExperimentOutcome::default();
    for (task, acq, seed, trace) in results {
        match trace {
            Ok(trace) => {
                outcome.rows.extend(trace_rows(task, acq, seed, &trace));
                outcome
                    .warnings
                    .extend(trace.warnings.iter().map(|w| format!("{task}/{}/{seed}: {w}", acq.name())));
            }
            Err(e) => outcome.failures.push(RunFailure {
                task: task.to_string(),
                acq: acq.name().to_string(),
                seed,
                error: format!("{e:#}"),
            }),
        }
    }
    Ok(outcome)
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    // Written explicitly so an empty result set still carries the header.
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.task.clone(),
            row.acq.clone(),
            row.seed.to_string(),
            row.iteration.to_string(),
            row.branch.clone(),
            row.x.clone(),
            row.y.to_string(),
            row.simple_regret.to_string(),
            row.inference_regret.to_string(),
            row.acq_time_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(anyhow!("line 1: unexpected header {:?}", header.join(",")));
    }
    let mut rows = Vec::new();
    for record in r.deserialize::<ResultRow>() {
        rows.push(record.map_err(|e| match e.position() {
            Some(pos) => anyhow!("line {}: {e}", pos.line()),
            None => anyhow!("{e}"),
        })?);
    }
    Ok(rows)
}

/// Location of the failure manifest written next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".failures.json");
    out.with_file_name(name)
}

/// Writes the rows, plus a failure manifest when any run failed.
pub fn write_outcome(out: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    write_rows(out, &outcome.rows)?;
    let manifest = manifest_path(out);
    if outcome.is_success() {
        if manifest.exists() {
            std::fs::remove_file(&manifest)?;
        }
    } else {
        let json = serde_json::json!({
            "results": out,
            "rows_written": outcome.rows.len(),
            "failures": outcome.failures,
        });
        std::fs::write(&manifest, serde_json::to_string_pretty(&json)?)
            .with_context(|| format!("writing {}", manifest.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use jes_core::benchmarks::{SyntheticFunction, TaskSpec};

    #[test]
    fn joins_coordinates() {
        assert_eq!(join_coords(&[0.5, 1.0, -2.25]), "0.5;1;-2.25");
        assert_eq!(join_coords(&[]), "");
    }

    #[test]
    fn manifest_sits_next_to_results() {
        assert_eq!(manifest_path(Path::new("/tmp/out/r.csv")), Path::new("/tmp/out/r.csv.failures.json"));
    }

    #[test]
    fn fixed_mode_without_kernel_fails() {
        let task = TaskSpec::Synthetic {
            function: SyntheticFunction::Branin,
            noise_variance: None,
        }
        .build()
        .unwrap();
        let mut base = BoConfig::default();
        base.hyper.mode = HyperMode::Fixed;
        assert!(config_for(&base, &task, AcquisitionKind::Ei).is_err());
        base.hyper.mode = HyperMode::Map;
        assert!(config_for(&base, &task, AcquisitionKind::Ei).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ResultRow {
            task: "branin".into(),
            acq: "ei".into(),
            seed: 3,
            iteration: 0,
            branch: "init".into(),
            x: join_coords(&[0.1, 0.2]),
            y: -1.5,
            simple_regret: 0.25,
            inference_regret: 0.5,
            acq_time_ms: 0.0,
        }];
        write_rows(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(read_rows(&path).unwrap(), rows);
    }
}
