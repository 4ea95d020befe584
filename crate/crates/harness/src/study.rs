//! How much of the entropy reduction caused by truncating the latent value
//! a moment-matched Gaussian captures, against a Monte Carlo reference.
//!
//! Each cell splits unit total variance into `1 - r` signal and `r` noise and
//! truncates the signal above its `q`-quantile.

use std::path::Path;

use anyhow::{bail, Context, Result};
use jes_core::gauss::{gaussian_entropy, mc_truncation_entropy, norm_quantile, truncated_moments};
use jes_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

pub const DEFAULT_NOISE_RATIOS: [f64; 4] = [1e-3, 1e-2, 0.1, 0.5];
pub const DEFAULT_QUANTILES: [f64; 4] = [1e-6, 1e-4, 1e-2, 0.5];
pub const DEFAULT_N_MC: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub noise_ratio: f64,
    pub quantile: f64,
    pub mm_reduction: f64,
    pub mc_reduction: f64,
    pub std_err: f64,
    pub ratio: f64,
}

pub fn study_cell(noise_ratio: f64, quantile: f64, n_mc: usize, seed: u64) -> Result<StudyCell> {
    if !(noise_ratio > 0.0 && noise_ratio < 1.0) {
        bail!("noise ratio {noise_ratio} is outside (0, 1)");
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        bail!("quantile {quantile} is outside (0, 1)");
    }
    let var_f = 1.0 - noise_ratio;
    let upper = var_f.sqrt() * norm_quantile(quantile);
    let prior_entropy = gaussian_entropy(1.0)?;
    let tm = truncated_moments(0.0, var_f, upper);
    let mm_reduction = prior_entropy - gaussian_entropy(tm.variance + noise_ratio)?;
    let mc = mc_truncation_entropy(0.0, var_f, noise_ratio, upper, n_mc, seed)?;
    let mc_reduction = prior_entropy - mc.entropy;
    Ok(StudyCell {
        noise_ratio,
        quantile,
        mm_reduction,
        mc_reduction,
        std_err: mc.std_err,
        ratio: mm_reduction / mc_reduction,
    })
}

/// Every (noise ratio, quantile) cell, noise ratio major. Cell `(i, j)` uses
/// its own stream derived from `seed`.
pub fn approx_study(noise_ratios: &[f64], quantiles: &[f64], n_mc: usize, seed: u64) -> Result<Vec<StudyCell>> {
    let mut cells = Vec::with_capacity(noise_ratios.len() * quantiles.len());
    for (i, &r) in noise_ratios.iter().enumerate() {
        for (j, &q) in quantiles.iter().enumerate() {
            cells.push(study_cell(r, q, n_mc, derive_seed(seed, &[i as u64, j as u64]))?);
        }
    }
    Ok(cells)
}

pub fn write_study(path: &Path, cells: &[StudyCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_inputs() {
        assert!(study_cell(0.0, 0.5, 1000, 0).is_err());
        assert!(study_cell(0.1, 1.0, 1000, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = approx_study(&[0.1], &[0.01, 0.5], 5000, 9).unwrap();
        let b = approx_study(&[0.1], &[0.01, 0.5], 5000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn reductions_are_positive() {
        let c = study_cell(0.01, 0.01, 20_000, 1).unwrap();
        assert!(c.mm_reduction > 0.0 && c.mc_reduction > 0.0);
        assert!(c.std_err > 0.0);
    }
}
