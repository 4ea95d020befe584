//! Gaussian process regression with a squared-exponential ARD kernel.
//!
//! The posterior keeps a packed lower-triangular Cholesky factor of
//! `K_n + diag(noise)` that grows one row at a time, so conditioning on a
//! single extra observation costs `O(n²)`: this is what makes the JES
//! ensemble of opt-pair-conditioned posteriors cheap to build.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest diagonal jitter, relative to the output scale.
pub const JITTER_REL: f64 = 1e-10;
/// Largest diagonal jitter tried before giving up, relative to the output scale.
pub const MAX_JITTER_REL: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

static VARIANCE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a predicted variance fell outside `[0, σ²]` and was
/// clamped, process-wide.
pub fn variance_clamp_count() -> u64 {
    VARIANCE_CLAMPS.load(Ordering::Relaxed)
}

/// Squared-exponential ARD hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length_scales: Vec<f64>,
    pub output_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(length_scales: Vec<f64>, output_scale: f64, noise_variance: f64) -> Result<Self> {
        let params = Self {
            length_scales,
            output_scale,
            noise_variance,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn isotropic(dim: usize, length_scale: f64, output_scale: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![length_scale; dim], output_scale, noise_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() {
            return Err(Error::InvalidParams("no length scales".into()));
        }
        if let Some(l) = self.length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParams(format!("length scale {l} is not positive")));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "output scale {} is not positive",
                self.output_scale
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "noise variance {} is negative",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Noise carried by fantasized noiseless observations.
    pub fn jitter(&self) -> f64 {
        JITTER_REL * self.output_scale
    }

    #[inline]
    pub(crate) fn k(&self, x: &[f64], x2: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((a, b), l) in x.iter().zip(x2).zip(&self.length_scales) {
            let t = (a - b) / l;
            r2 += t * t;
        }
        self.output_scale * (-0.5 * r2).exp()
    }
}

/// `σ²·exp(-½ Σ_d ((x_d - x2_d)/θ_d)²)`.
pub fn kernel_eval(params: &KernelParams, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.dim(), x2.len())?;
    Ok(params.k(x, x2))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// An observed (or fantasized) input/output pair with its own noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
    pub noise_variance: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64, noise_variance: f64) -> Self {
        Self { x, y, noise_variance }
    }
}

/// Posterior moments at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Variance of the latent function value.
    pub var_f: f64,
    /// Variance of a noisy observation, `var_f + σ_ε²`.
    pub var_y: f64,
}

/// Exact GP posterior given a list of observations.
///
/// Immutable once built; [`GpPosterior::extend`] returns a new posterior.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    params: KernelParams,
    data: Vec<Observation>,
    /// Packed rows of the lower Cholesky factor; row `i` holds `i + 1` entries.
    chol: Vec<f64>,
    /// `L⁻¹ y`.
    z: Vec<f64>,
    /// `(K + Σ)⁻¹ y`.
    alpha: Vec<f64>,
    /// Diagonal jitter added on top of the per-observation noise.
    extra_jitter: f64,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Jitter ladder: none, then `1e-10·σ²` growing tenfold to `1e-4·σ²`.
fn jitter_ladder(output_scale: f64) -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain((0..7).map(move |k| JITTER_REL * output_scale * 10f64.powi(k)))
}

impl GpPosterior {
    /// The prior: no observations.
    pub fn prior(params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            data: Vec::new(),
            chol: Vec::new(),
            z: Vec::new(),
            alpha: Vec::new(),
            extra_jitter: 0.0,
        })
    }

    /// Conditions the prior on `data`.
    ///
    /// If the Gram matrix is numerically singular the whole diagonal is
    /// jittered, escalating tenfold from `1e-10·σ²` up to `1e-4·σ²`.
    pub fn fit(data: &[Observation], params: &KernelParams) -> Result<Self> {
        params.validate()?;
        for obs in data {
            check_dim(params.dim(), obs.x.len())?;
            if !(obs.noise_variance >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "observation noise variance {} is negative",
                    obs.noise_variance
                )));
            }
        }
        let mut last = 0.0;
        for extra in jitter_ladder(params.output_scale) {
            last = extra;
            let mut post = Self::prior(params.clone())?;
            post.extra_jitter = extra;
            let ok = data.iter().all(|obs| post.push_row(obs.clone(), extra));
            if ok {
                post.refresh_alpha();
                return Ok(post);
            }
        }
        Err(Error::NotPositiveDefinite {
            size: data.len(),
            jitter: last,
        })
    }

    /// Posterior after additionally observing `obs`, in `O(n²)`.
    ///
    /// Appends one row to the existing factor; only the new diagonal entry is
    /// jittered if the extension is numerically singular.
    pub fn extend(&self, obs: Observation) -> Result<Self> {
        check_dim(self.params.dim(), obs.x.len())?;
        let mut last = 0.0;
        for extra in jitter_ladder(self.params.output_scale) {
            last = extra;
            let mut post = self.clone();
            if post.push_row(obs.clone(), self.extra_jitter + extra) {
                post.refresh_alpha();
                return Ok(post);
            }
        }
        Err(Error::NotPositiveDefinite {
            size: self.data.len() + 1,
            jitter: last,
        })
    }

    /// Appends the factor row for `obs`. Returns false if the new pivot is not
    /// safely positive.
    fn push_row(&mut self, obs: Observation, extra: f64) -> bool {
        let n = self.data.len();
        let mut row: Vec<f64> = self.data.iter().map(|o| self.params.k(&obs.x, &o.x)).collect();
        self.forward_solve_in_place(&mut row);
        let diag_sq = self.params.output_scale + obs.noise_variance + extra - dot(&row, &row);
        if !(diag_sq > f64::EPSILON * self.params.output_scale) {
            return false;
        }
        let diag = diag_sq.sqrt();
        let z_new = (obs.y - dot(&row, &self.z)) / diag;
        self.chol.reserve(n + 1);
        self.chol.extend_from_slice(&row);
        self.chol.push(diag);
        self.z.push(z_new);
        self.data.push(obs);
        true
    }

    fn refresh_alpha(&mut self) {
        let n = self.data.len();
        let mut alpha = self.z.clone();
        for i in (0..n).rev() {
            let a = alpha[i] / self.chol[row_offset(i) + i];
            alpha[i] = a;
            let row = &self.chol[row_offset(i)..row_offset(i) + i];
            for (j, l) in row.iter().enumerate() {
                alpha[j] -= l * a;
            }
        }
        self.alpha = alpha;
    }

    /// Solves `L v = b` in place.
    fn forward_solve_in_place(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            let off = row_offset(i);
            let s = dot(&self.chol[off..off + i], &b[..i]);
            b[i] = (b[i] - s) / self.chol[off + i];
        }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn data(&self) -> &[Observation] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn extra_jitter(&self) -> f64 {
        self.extra_jitter
    }

    /// Row `i` of the Cholesky factor (entries `0..=i`).
    pub fn chol_row(&self, i: usize) -> &[f64] {
        &self.chol[row_offset(i)..row_offset(i) + i + 1]
    }

    /// `(K + Σ)⁻¹ y`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `L⁻¹ y`.
    pub fn whitened_targets(&self) -> &[f64] {
        &self.z
    }

    /// Posterior mean only, `O(n)`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.params.dim(), x.len())?;
        Ok(self.mean_unchecked(x))
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.data
            .iter()
            .zip(&self.alpha)
            .map(|(o, a)| a * self.params.k(x, &o.x))
            .sum()
    }

    /// Posterior mean and variances at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        check_dim(self.params.dim(), x.len())?;
        let mut v = Vec::with_capacity(self.len());
        let (mean, raw_var) = self.whitened_cross(x, &mut v);
        Ok(self.finish(mean, raw_var))
    }

    /// Computes `v = L⁻¹ k_n(x)` into `v` and returns the mean and the
    /// unclamped latent variance.
    pub(crate) fn whitened_cross(&self, x: &[f64], v: &mut Vec<f64>) -> (f64, f64) {
        v.clear();
        v.extend(self.data.iter().map(|o| self.params.k(x, &o.x)));
        self.forward_solve_in_place(v);
        let mean = dot(v, &self.z);
        let var = self.params.output_scale - dot(v, v);
        (mean, var)
    }

    /// Clamps the latent variance into `[0, σ²]`.
    #[inline]
    pub(crate) fn clamp_variance(&self, var: f64) -> f64 {
        if var < 0.0 || var > self.params.output_scale {
            VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        }
        var.clamp(0.0, self.params.output_scale)
    }

    fn finish(&self, mean: f64, raw_var: f64) -> Prediction {
        let var_f = self.clamp_variance(raw_var);
        Prediction {
            mean,
            var_f,
            var_y: var_f + self.params.noise_variance,
        }
    }

    /// Prediction for a posterior that extends `base` by exactly one
    /// observation, reusing `base`'s whitened cross-covariance `base_v` (and
    /// its mean/raw variance at `x`). Costs `O(n)` instead of `O(n²)`.
    pub(crate) fn predict_from_base(&self, x: &[f64], base_v: &[f64], base_mean: f64, base_raw_var: f64) -> (f64, f64) {
        let n = base_v.len();
        debug_assert_eq!(self.len(), n + 1);
        let row = &self.chol[row_offset(n)..row_offset(n) + n + 1];
        let c = self.params.k(x, &self.data[n].x) - dot(&row[..n], base_v);
        let u = c / row[n];
        (base_mean + u * self.z[n], base_raw_var - u * u)
    }

    /// Log marginal likelihood of the conditioned data.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let log_det_half: f64 = (0..n).map(|i| self.chol[row_offset(i) + i].ln()).sum();
        -0.5 * dot(&self.z, &self.z) - log_det_half - 0.5 * n as f64 * LN_2PI
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the posterior for `data` under `params`.
pub fn fit_posterior(data: &[Observation], params: &KernelParams) -> Result<GpPosterior> {
    GpPosterior::fit(data, params)
}

pub fn predict(posterior: &GpPosterior, x: &[f64]) -> Result<Prediction> {
    posterior.predict(x)
}

pub fn rank_one_extend(posterior: &GpPosterior, obs: Observation) -> Result<GpPosterior> {
    posterior.extend(obs)
}

/// `-½ yᵀ(K+Σ)⁻¹y - ½ log det(K+Σ) - (n/2) log 2π`.
pub fn log_marginal_likelihood(data: &[Observation], params: &KernelParams) -> Result<f64> {
    Ok(GpPosterior::fit(data, params)?.log_marginal_likelihood())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::rng_from;

    fn random_data(n: usize, dim: usize, noise: f64, seed: u64) -> Vec<Observation> {
        let mut rng = rng_from(seed, &[]);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let y = x.iter().map(|v| (4.0 * v).sin()).sum::<f64>() + 0.1 * rng.random::<f64>();
                Observation::new(x, y, noise)
            })
            .collect()
    }

    /// Dense-solve oracle for the posterior moments, independent of the
    /// packed incremental factor.
    fn dense_predict(data: &[Observation], params: &KernelParams, x: &[f64]) -> (f64, f64) {
        let n = data.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            params.k(&data[i].x, &data[j].x) + if i == j { data[i].noise_variance } else { 0.0 }
        });
        let kx = DVector::from_fn(n, |i, _| params.k(x, &data[i].x));
        let y = DVector::from_fn(n, |i, _| data[i].y);
        let lu = gram.lu();
        let a = lu.solve(&y).unwrap();
        let b = lu.solve(&kx).unwrap();
        (kx.dot(&a), params.output_scale - kx.dot(&b))
    }

    #[test]
    fn kernel_values() {
        let p = KernelParams::new(vec![1.0], 1.0, 0.0).unwrap();
        assert_eq!(kernel_eval(&p, &[0.0], &[0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(kernel_eval(&p, &[0.0], &[1.0]).unwrap(), 0.606_530_66, epsilon = 1e-8);
        let p = KernelParams::new(vec![0.1, 0.1], 10.0, 0.01).unwrap();
        assert_eq!(kernel_eval(&p, &[0.3, 0.4], &[0.3, 0.4]).unwrap(), 10.0);
        assert!(matches!(
            kernel_eval(&p, &[0.3], &[0.3, 0.4]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_is_symmetric() {
        let p = KernelParams::new(vec![0.3, 2.0], 1.7, 0.0).unwrap();
        let (a, b) = ([0.1, -0.4], [0.9, 0.3]);
        assert_eq!(p.k(&a, &b), p.k(&b, &a));
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(vec![0.0], 1.0, 0.0).is_err());
        assert!(KernelParams::new(vec![1.0], -1.0, 0.0).is_err());
        assert!(KernelParams::new(vec![1.0], 1.0, -0.1).is_err());
        assert!(KernelParams::new(vec![], 1.0, 0.1).is_err());
    }

    #[test]
    fn prior_prediction() {
        let p = KernelParams::new(vec![0.5, 0.5], 2.0, 0.3).unwrap();
        let post = fit_posterior(&[], &p).unwrap();
        let pr = post.predict(&[0.2, 0.9]).unwrap();
        assert_eq!((pr.mean, pr.var_f, pr.var_y), (0.0, 2.0, 2.3));
    }

    #[test]
    fn noiseless_single_observation_interpolates() {
        let p = KernelParams::new(vec![0.4], 1.3, 0.0).unwrap();
        let post = fit_posterior(&[Observation::new(vec![0.25], 3.0, 0.0)], &p).unwrap();
        let pr = post.predict(&[0.25]).unwrap();
        assert_abs_diff_eq!(pr.mean, 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(pr.var_f, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn noisy_single_observation_by_hand() {
        let p = KernelParams::new(vec![1.0], 1.0, 1.0).unwrap();
        let post = fit_posterior(&[Observation::new(vec![0.0], 1.0, 1.0)], &p).unwrap();
        let pr = post.predict(&[0.0]).unwrap();
        assert_abs_diff_eq!(pr.mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pr.var_f, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pr.var_y, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn far_away_variance_reverts_to_prior() {
        let p = KernelParams::new(vec![0.1, 0.1], 10.0, 0.01).unwrap();
        let post = fit_posterior(&random_data(20, 2, 0.01, 1), &p).unwrap();
        let pr = post.predict(&[50.0, -50.0]).unwrap();
        assert!((pr.var_f - 10.0).abs() < 1e-6);
    }

    #[test]
    fn factor_reconstructs_gram() {
        let p = KernelParams::new(vec![0.3, 0.2, 0.5], 2.0, 0.05).unwrap();
        let data = random_data(40, 3, 0.05, 2);
        let post = fit_posterior(&data, &p).unwrap();
        let n = data.len();
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..n {
            for j in 0..=i {
                let li = post.chol_row(i);
                let lj = post.chol_row(j);
                let recon: f64 = (0..=j).map(|k| li[k] * lj[k]).sum();
                let target = p.k(&data[i].x, &data[j].x)
                    + if i == j { data[i].noise_variance + post.extra_jitter() } else { 0.0 };
                err += (recon - target).powi(2);
                norm += target.powi(2);
            }
        }
        assert!((err / norm).sqrt() < 1e-10);
    }

    #[test]
    fn matches_dense_solve() {
        let p = KernelParams::new(vec![0.3, 0.6], 1.5, 0.02).unwrap();
        let data = random_data(30, 2, 0.02, 3);
        let post = fit_posterior(&data, &p).unwrap();
        let mut rng = rng_from(99, &[]);
        for _ in 0..50 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let (m, v) = dense_predict(&data, &p, &x);
            let pr = post.predict(&x).unwrap();
            assert_abs_diff_eq!(pr.mean, m, epsilon = 1e-9);
            assert_abs_diff_eq!(pr.var_f, v.max(0.0), epsilon = 1e-9);
            assert_abs_diff_eq!(post.predict_mean(&x).unwrap(), m, epsilon = 1e-9);
        }
    }

    #[test]
    fn extend_prior_equals_single_fit() {
        let p = KernelParams::new(vec![0.7], 1.0, 0.1).unwrap();
        let obs = Observation::new(vec![0.4], -0.8, 0.1);
        let a = GpPosterior::prior(p.clone()).unwrap().extend(obs.clone()).unwrap();
        let b = fit_posterior(&[obs], &p).unwrap();
        for &x in &[0.0, 0.4, 0.9] {
            let (pa, pb) = (a.predict(&[x]).unwrap(), b.predict(&[x]).unwrap());
            assert_abs_diff_eq!(pa.mean, pb.mean, epsilon = 1e-12);
            assert_abs_diff_eq!(pa.var_f, pb.var_f, epsilon = 1e-12);
        }
    }

    #[test]
    fn extend_matches_dense_refit() {
        let p = KernelParams::new(vec![0.25, 0.4], 3.0, 0.01).unwrap();
        let data = random_data(11, 2, 0.01, 4);
        let base = fit_posterior(&data[..10], &p).unwrap();
        let ext = base.extend(data[10].clone()).unwrap();
        let mut rng = rng_from(5, &[]);
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let (m, v) = dense_predict(&data, &p, &x);
            let pr = ext.predict(&x).unwrap();
            assert!((pr.mean - m).abs() < 1e-8);
            assert!((pr.var_f - v.max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn noiseless_opt_pair_pins_variance() {
        let p = KernelParams::new(vec![0.2, 0.2], 10.0, 0.01).unwrap();
        let base = fit_posterior(&random_data(15, 2, 0.01, 6), &p).unwrap();
        let x_star = vec![0.37, 0.61];
        let ext = base.extend(Observation::new(x_star.clone(), 4.2, p.jitter())).unwrap();
        let pr = ext.predict(&x_star).unwrap();
        assert!(pr.var_f <= p.jitter() * (1.0 + 1e-6), "{}", pr.var_f);
        assert!((pr.mean - 4.2).abs() < 1e-6);
    }

    #[test]
    fn predict_from_base_matches_full_prediction() {
        let p = KernelParams::new(vec![0.2, 0.3], 10.0, 0.01).unwrap();
        let base = fit_posterior(&random_data(25, 2, 0.01, 7), &p).unwrap();
        let ext = base.extend(Observation::new(vec![0.5, 0.5], 2.0, p.jitter())).unwrap();
        let mut v = Vec::new();
        let mut rng = rng_from(8, &[]);
        for _ in 0..50 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let (bm, bv) = base.whitened_cross(&x, &mut v);
            let (m, var) = ext.predict_from_base(&x, &v, bm, bv);
            let full = ext.predict(&x).unwrap();
            assert_abs_diff_eq!(m, full.mean, epsilon = 1e-10);
            assert_abs_diff_eq!(var.max(0.0), full.var_f, epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicate_noiseless_inputs_trigger_jitter() {
        let p = KernelParams::new(vec![0.5], 1.0, 0.0).unwrap();
        let data = vec![Observation::new(vec![0.3], 1.0, 0.0), Observation::new(vec![0.3], 1.0, 0.0)];
        let post = fit_posterior(&data, &p).unwrap();
        assert!(post.extra_jitter() > 0.0);
        assert!(post.extra_jitter() <= MAX_JITTER_REL);
        assert!((post.predict(&[0.3]).unwrap().mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_marginal_likelihood_values() {
        let p = KernelParams::new(vec![0.5], 1.5, 0.5).unwrap();
        assert_eq!(log_marginal_likelihood(&[], &p).unwrap(), 0.0);
        let v: f64 = 2.0;
        let lml = log_marginal_likelihood(&[Observation::new(vec![0.1], 0.0, 0.5)], &p).unwrap();
        assert_abs_diff_eq!(lml, -0.5 * (2.0 * std::f64::consts::PI * v).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_marginal_likelihood_matches_dense() {
        let p = KernelParams::new(vec![0.3, 0.3], 2.0, 0.1).unwrap();
        let data = random_data(20, 2, 0.1, 9);
        let n = data.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            p.k(&data[i].x, &data[j].x) + if i == j { data[i].noise_variance } else { 0.0 }
        });
        let y = DVector::from_fn(n, |i, _| data[i].y);
        let chol = gram.clone().cholesky().unwrap();
        let quad = y.dot(&chol.solve(&y));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let expected = -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * LN_2PI;
        assert_abs_diff_eq!(log_marginal_likelihood(&data, &p).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_interpolation_with_jitter_noise() {
        let p = KernelParams::new(vec![0.3, 0.3], 1.0, 0.0).unwrap();
        let data: Vec<Observation> = random_data(30, 2, 0.0, 10)
            .into_iter()
            .map(|o| Observation::new(o.x, o.y, p.jitter()))
            .collect();
        let post = fit_posterior(&data, &p).unwrap();
        for o in &data {
            assert!((post.predict_mean(&o.x).unwrap() - o.y).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let p = KernelParams::new(vec![0.3, 0.3], 1.0, 0.0).unwrap();
        assert!(fit_posterior(&[Observation::new(vec![0.1], 0.0, 0.0)], &p).is_err());
        let post = fit_posterior(&[], &p).unwrap();
        assert!(post.predict(&[0.1]).is_err());
        assert!(post.extend(Observation::new(vec![0.1], 0.0, 0.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn extend_agrees_with_refit(n in 1usize..50, dim in 1usize..7, seed in any::<u64>()) {
            let mut rng = rng_from(seed, &[1]);
            let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..1.0)).collect();
            let p = KernelParams::new(ls, rng.random_range(0.5..5.0), rng.random_range(1e-3..0.1)).unwrap();
            let data = random_data(n + 1, dim, p.noise_variance, seed);
            let refit = fit_posterior(&data, &p).unwrap();
            let ext = fit_posterior(&data[..n], &p).unwrap().extend(data[n].clone()).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let (a, b) = (refit.predict(&x).unwrap(), ext.predict(&x).unwrap());
                prop_assert!((a.mean - b.mean).abs() < 1e-8);
                prop_assert!((a.var_f - b.var_f).abs() < 1e-8);
            }
        }

        #[test]
        fn conditioning_never_inflates_variance(n in 0usize..30, seed in any::<u64>()) {
            let p = KernelParams::new(vec![0.3, 0.4], 2.0, 0.01).unwrap();
            let data = random_data(n + 1, 2, 0.01, seed);
            let before = fit_posterior(&data[..n], &p).unwrap();
            let after = before.extend(data[n].clone()).unwrap();
            let mut rng = rng_from(seed, &[2]);
            for _ in 0..20 {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                prop_assert!(after.predict(&x).unwrap().var_f <= before.predict(&x).unwrap().var_f + 1e-10);
            }
        }
    }
}
