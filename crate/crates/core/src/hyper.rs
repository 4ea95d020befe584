//! Kernel hyperparameter selection: fixed, MAP-II, or a small ensemble of
//! MAP restarts.
//!
//! MAP and ensemble modes operate on standardized outputs; the returned
//! [`Standardizer`] maps between original and model units.

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gp::{GpPosterior, KernelParams, Observation};
use crate::rng::rng_from;
use crate::search::Bounds;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperMode {
    Fixed,
    Map,
    Ensemble,
}

/// Log-normal prior widths (standard deviations of the log parameters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogNormalPrior {
    /// Prior median length scale as a fraction of each dimension's range.
    pub length_scale_fraction: f64,
    pub length_scale_log_sd: f64,
    pub output_scale_log_sd: f64,
    /// Prior median noise variance as a fraction of the output variance.
    pub noise_fraction: f64,
    pub noise_log_sd: f64,
}

impl Default for LogNormalPrior {
    fn default() -> Self {
        Self {
            length_scale_fraction: 0.3,
            length_scale_log_sd: 1.0,
            output_scale_log_sd: 1.0,
            noise_fraction: 0.01,
            noise_log_sd: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperFitConfig {
    pub mode: HyperMode,
    /// Ensemble size S; ignored outside ensemble mode.
    pub n_sets: usize,
    pub restarts: usize,
    pub max_iters: u64,
    pub prior: LogNormalPrior,
    /// Returned verbatim in fixed mode.
    pub fixed: Option<KernelParams>,
}

impl Default for HyperFitConfig {
    fn default() -> Self {
        Self {
            mode: HyperMode::Map,
            n_sets: 1,
            restarts: 5,
            max_iters: 300,
            prior: LogNormalPrior::default(),
            fixed: None,
        }
    }
}

impl HyperFitConfig {
    pub fn fixed(params: KernelParams) -> Self {
        Self {
            mode: HyperMode::Fixed,
            fixed: Some(params),
            ..Self::default()
        }
    }
}

/// Affine output transform `y_model = (y - offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub offset: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }

    /// Zero mean, unit sample variance; falls back to unit scale for
    /// (near-)constant outputs.
    pub fn from_targets(ys: &[f64]) -> Self {
        if ys.is_empty() {
            return Self::identity();
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            offset: mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }

    /// Observations in model units; noise variances are rescaled too.
    pub fn apply(&self, data: &[Observation]) -> Vec<Observation> {
        let s2 = self.scale * self.scale;
        data.iter()
            .map(|o| Observation::new(o.x.clone(), self.forward(o.y), o.noise_variance / s2))
            .collect()
    }
}

/// Result of hyperparameter fitting. Parameter sets are in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperFit {
    pub sets: Vec<KernelParams>,
    pub standardizer: Standardizer,
    pub warnings: Vec<String>,
}

impl HyperFit {
    /// The set used for recommendations: the first (MAP) set.
    pub fn map_params(&self) -> &KernelParams {
        &self.sets[0]
    }
}

/// Negative log posterior over `[ln θ_1..ln θ_D, ln σ², ln σ_ε²]`.
struct MapObjective<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    prior_median: Vec<f64>,
    prior_sd: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl MapObjective<'_> {
    fn project(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| if v.is_nan() { *lo } else { v.clamp(*lo, *hi) })
            .collect()
    }

    fn params(&self, p: &[f64]) -> KernelParams {
        let d = p.len() - 2;
        KernelParams {
            length_scales: p[..d].iter().map(|v| v.exp()).collect(),
            output_scale: p[d].exp(),
            noise_variance: p[d + 1].exp(),
        }
    }

    fn neg_log_posterior(&self, p: &[f64]) -> f64 {
        let q = self.project(p);
        let params = self.params(&q);
        let data: Vec<Observation> = self
            .xs
            .iter()
            .zip(self.ys)
            .map(|(x, y)| Observation::new(x.clone(), *y, params.noise_variance))
            .collect();
        let lml = match GpPosterior::fit(&data, &params) {
            Ok(post) => post.log_marginal_likelihood(),
            Err(_) => return 1e10,
        };
        let log_prior: f64 = q
            .iter()
            .zip(self.prior_median.iter().zip(&self.prior_sd))
            .map(|(v, (m, s))| -0.5 * ((v - m) / s).powi(2))
            .sum();
        // Distance outside the box keeps the simplex from drifting away.
        let excess: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        let value = -lml - log_prior + 1e3 * excess;
        if value.is_finite() {
            value
        } else {
            1e10
        }
    }
}

impl CostFunction for &MapObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        Ok(self.neg_log_posterior(p))
    }
}

fn nelder_mead(obj: &MapObjective<'_>, start: Vec<f64>, max_iters: u64) -> Option<(Vec<f64>, f64)> {
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut v = start.clone();
        v[i] += 0.5;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-6).ok()?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .ok()?;
    let best = res.state().best_param.clone()?;
    let cost = obj.neg_log_posterior(&best);
    cost.is_finite().then(|| (obj.project(&best), cost))
}

/// Selects kernel hyperparameters for `data` on `bounds`.
pub fn fit_hyperparameters(
    data: &[Observation],
    bounds: &Bounds,
    config: &HyperFitConfig,
    seed: u64,
) -> Result<HyperFit> {
    if config.mode == HyperMode::Fixed {
        let params = config
            .fixed
            .clone()
            .ok_or_else(|| Error::InvalidArgument("fixed mode needs parameters".into()))?;
        params.validate()?;
        return Ok(HyperFit {
            sets: vec![params],
            standardizer: Standardizer::identity(),
            warnings: Vec::new(),
        });
    }
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "hyperparameter fitting needs at least 2 observations, got {}",
            data.len()
        )));
    }
    let dim = bounds.dim();
    if let Some(o) = data.iter().find(|o| o.x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: o.x.len(),
        });
    }
    let ys: Vec<f64> = data.iter().map(|o| o.y).collect();
    let standardizer = Standardizer::from_targets(&ys);
    let ys: Vec<f64> = ys.iter().map(|y| standardizer.forward(*y)).collect();
    let xs: Vec<Vec<f64>> = data.iter().map(|o| o.x.clone()).collect();

    let pr = &config.prior;
    let widths: Vec<f64> = (0..dim).map(|d| bounds.width(d)).collect();
    let mut prior_median: Vec<f64> = widths.iter().map(|w| (pr.length_scale_fraction * w).ln()).collect();
    prior_median.push(0.0);
    prior_median.push(pr.noise_fraction.ln());
    let mut prior_sd = vec![pr.length_scale_log_sd; dim];
    prior_sd.push(pr.output_scale_log_sd);
    prior_sd.push(pr.noise_log_sd);
    let mut lower: Vec<f64> = widths.iter().map(|w| (1e-3 * w).ln()).collect();
    let mut upper: Vec<f64> = widths.iter().map(|w| (1e2 * w).ln()).collect();
    lower.extend([(1e-3f64).ln(), (1e-6f64).ln()]);
    upper.extend([(1e3f64).ln(), (10.0f64).ln()]);
    let obj = MapObjective {
        xs: &xs,
        ys: &ys,
        prior_median: prior_median.clone(),
        prior_sd: prior_sd.clone(),
        lower,
        upper,
    };

    let prior_draw = |tags: &[u64]| -> Vec<f64> {
        let mut rng = rng_from(seed, tags);
        prior_median
            .iter()
            .zip(&prior_sd)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + s * z
            })
            .collect()
    };

    let mut warnings = Vec::new();
    // MAP: restart 0 from the prior median, the rest from prior draws.
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..config.restarts.max(1) {
        let start = if r == 0 {
            prior_median.clone()
        } else {
            prior_draw(&[0, r as u64])
        };
        if let Some((p, c)) = nelder_mead(&obj, obj.project(&start), config.max_iters) {
            if best.as_ref().is_none_or(|(_, bc)| c < *bc) {
                best = Some((p, c));
            }
        }
    }
    let map = match best {
        Some((p, _)) => p,
        None => {
            warnings.push("MAP optimization diverged; using prior medians".to_string());
            prior_median.clone()
        }
    };
    let mut sets = vec![obj.params(&map)];
    if config.mode == HyperMode::Ensemble {
        for s in 1..config.n_sets.max(1) {
            let start = obj.project(&prior_draw(&[1, s as u64]));
            match nelder_mead(&obj, start, config.max_iters) {
                Some((p, _)) => sets.push(obj.params(&p)),
                None => {
                    warnings.push(format!("ensemble member {s} diverged; using the MAP set"));
                    sets.push(obj.params(&map));
                }
            }
        }
    }
    Ok(HyperFit {
        sets,
        standardizer,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn gp_sample_data(params: &KernelParams, n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = rng_from(seed, &[]);
        let dim = params.dim();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let k = DMatrix::from_fn(n, n, |i, j| params.k(&xs[i], &xs[j]) + if i == j { 1e-8 } else { 0.0 });
        let l = k.cholesky().unwrap().l();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let f = l * z;
        xs.into_iter()
            .zip(f.iter())
            .map(|(x, f)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                Observation::new(x, f + params.noise_variance.sqrt() * e, params.noise_variance)
            })
            .collect()
    }

    #[test]
    fn fixed_mode_returns_params_verbatim() {
        let p = KernelParams::isotropic(4, 0.2, 10.0, 0.01).unwrap();
        let fit = fit_hyperparameters(&[], &Bounds::unit(4), &HyperFitConfig::fixed(p.clone()), 0).unwrap();
        assert_eq!(fit.sets, vec![p]);
        assert_eq!(fit.standardizer, Standardizer::identity());
    }

    #[test]
    fn map_recovers_length_scales() {
        let truth = KernelParams::new(vec![0.15, 0.4], 1.0, 0.01).unwrap();
        let data = gp_sample_data(&truth, 100, 11);
        let fit = fit_hyperparameters(&data, &Bounds::unit(2), &HyperFitConfig::default(), 3).unwrap();
        assert!(fit.warnings.is_empty());
        for (got, want) in fit.map_params().length_scales.iter().zip(&truth.length_scales) {
            assert!((got.ln() - want.ln()).abs() < 0.5, "{got} vs {want}");
        }
    }

    #[test]
    fn single_set_ensemble_equals_map() {
        let truth = KernelParams::new(vec![0.3], 1.0, 0.05).unwrap();
        let data = gp_sample_data(&truth, 20, 12);
        let map = fit_hyperparameters(&data, &Bounds::unit(1), &HyperFitConfig::default(), 4).unwrap();
        let ens_cfg = HyperFitConfig {
            mode: HyperMode::Ensemble,
            n_sets: 1,
            ..HyperFitConfig::default()
        };
        let ens = fit_hyperparameters(&data, &Bounds::unit(1), &ens_cfg, 4).unwrap();
        assert_eq!(map, ens);
    }

    #[test]
    fn ensemble_has_requested_size_and_map_first() {
        let truth = KernelParams::new(vec![0.3], 1.0, 0.05).unwrap();
        let data = gp_sample_data(&truth, 15, 13);
        let cfg = HyperFitConfig {
            mode: HyperMode::Ensemble,
            n_sets: 4,
            ..HyperFitConfig::default()
        };
        let ens = fit_hyperparameters(&data, &Bounds::unit(1), &cfg, 5).unwrap();
        let map = fit_hyperparameters(&data, &Bounds::unit(1), &HyperFitConfig::default(), 5).unwrap();
        assert_eq!(ens.sets.len(), 4);
        assert_eq!(ens.sets[0], map.sets[0]);
    }

    #[test]
    fn fitting_is_deterministic() {
        let truth = KernelParams::new(vec![0.2, 0.2], 2.0, 0.01).unwrap();
        let data = gp_sample_data(&truth, 25, 14);
        let a = fit_hyperparameters(&data, &Bounds::unit(2), &HyperFitConfig::default(), 9).unwrap();
        let b = fit_hyperparameters(&data, &Bounds::unit(2), &HyperFitConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_too_little_data() {
        let data = vec![Observation::new(vec![0.5], 1.0, 0.0)];
        assert!(fit_hyperparameters(&data, &Bounds::unit(1), &HyperFitConfig::default(), 0).is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let s = Standardizer::from_targets(&[1.0, 3.0, 5.0]);
        assert!((s.offset - 3.0).abs() < 1e-15);
        assert!((s.inverse(s.forward(4.2)) - 4.2).abs() < 1e-12);
        assert_eq!(Standardizer::from_targets(&[2.0, 2.0]).scale, 1.0);
    }

    #[test]
    fn log_marginal_likelihood_is_permutation_invariant() {
        let truth = KernelParams::new(vec![0.3, 0.2], 1.5, 0.02).unwrap();
        let mut data = gp_sample_data(&truth, 30, 15);
        let a = crate::gp::log_marginal_likelihood(&data, &truth).unwrap();
        data.reverse();
        data.swap(3, 17);
        let b = crate::gp::log_marginal_likelihood(&data, &truth).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
