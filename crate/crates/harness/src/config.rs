//! Experiment configuration, read from a single JSON file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jes_core::benchmarks::TaskSpec;
use jes_core::engine::{AcquisitionKind, BoConfig};
use serde::{Deserialize, Serialize};

/// Either an explicit list of seeds or `{"start": s, "count": n}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSpec>,
    pub acquisitions: Vec<AcquisitionKind>,
    pub seeds: Seeds,
    /// Every field is optional; missing ones take library defaults.
    #[serde(default)]
    pub bo: BoConfig,
    /// Worker threads; the CLI flag and `BO_WORKERS` take precedence.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            bail!("the experiment needs at least one task");
        }
        if self.acquisitions.is_empty() {
            bail!("the experiment needs at least one acquisition");
        }
        if self.seeds.to_vec().is_empty() {
            bail!("the experiment needs at least one seed");
        }
        self.bo.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{
                "tasks": [{"kind": "gp_sample", "dim": 2, "seed": 0}],
                "acquisitions": ["jes", "ei"],
                "seeds": {"start": 3, "count": 2},
                "bo": {"n_iters": 5, "hyper": {"mode": "fixed"}}
            }"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.seeds.to_vec(), vec![3, 4]);
        assert_eq!(c.bo.n_iters, 5);
        assert_eq!(c.bo.n_mc_samples, 100);
    }

    #[test]
    fn rejects_empty_lists() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"tasks": [], "acquisitions": ["jes"], "seeds": [1]}"#).unwrap();
        assert!(c.validate().is_err());
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"tasks": [{"kind": "synthetic", "function": "branin"}], "acquisitions": ["jes"], "seeds": []}"#,
        )
        .unwrap();
        assert!(c.validate().is_err());
    }
}
