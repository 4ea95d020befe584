//! Aggregates result rows into per-(task, acquisition, iteration) statistics
//! of log regret.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::experiment::{read_rows, ResultRow};

/// Regrets are floored here before taking logs.
pub const REGRET_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub std_err: f64,
}

impl Stats {
    /// Standard error uses the unbiased sample deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of an empty sample");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            median: median(values),
            std_err,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn log_regret(r: f64) -> f64 {
    r.max(REGRET_FLOOR).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub task: String,
    pub acq: String,
    pub iteration: usize,
    pub n_runs: usize,
    pub log_simple_regret: Stats,
    pub log_inference_regret: Stats,
    pub median_acq_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub regret_floor: f64,
    pub log_base: String,
    pub group_keys: Vec<String>,
    pub n_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metadata: SummaryMetadata,
    pub groups: Vec<GroupSummary>,
}

pub fn summarize_rows(rows: &[ResultRow]) -> Summary {
    let mut groups: BTreeMap<(&str, &str, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.task, &r.acq, r.iteration)).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((task, acq, iteration), rs)| {
            let simple: Vec<f64> = rs.iter().map(|r| log_regret(r.simple_regret)).collect();
            let inference: Vec<f64> = rs.iter().map(|r| log_regret(r.inference_regret)).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.acq_time_ms).collect();
            GroupSummary {
                task: task.to_string(),
                acq: acq.to_string(),
                iteration,
                n_runs: rs.len(),
                log_simple_regret: Stats::of(&simple),
                log_inference_regret: Stats::of(&inference),
                median_acq_time_ms: median(&times),
            }
        })
        .collect();
    Summary {
        metadata: SummaryMetadata {
            regret_floor: REGRET_FLOOR,
            log_base: "e".into(),
            group_keys: vec!["task".into(), "acq".into(), "iteration".into()],
            n_rows: rows.len(),
        },
        groups,
    }
}

pub fn summarize(csv_path: &Path) -> Result<Summary> {
    Ok(summarize_rows(&read_rows(csv_path)?))
}
