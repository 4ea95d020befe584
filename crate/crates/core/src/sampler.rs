//! Approximate posterior sample paths from random Fourier features and the
//! opt-pairs `(x*, f*)` obtained by maximizing them.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gp::{GpPosterior, KernelParams, Observation, JITTER_REL, MAX_JITTER_REL};
use crate::rng::{derive_seed, rng_from};
use crate::search::{argmax, default_grid_size, grid_step, refine, sobol_grid, Bounds, Maximum};
use crate::{Error, Result};

/// Random Fourier feature basis for the SE-ARD kernel:
/// `φ(x) = a·cos(Wx + b)` with `a = √(2σ²/F)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffBasis {
    /// Row-major `F × D` frequencies.
    weights: Vec<f64>,
    phases: Vec<f64>,
    amplitude: f64,
    dim: usize,
}

impl RffBasis {
    pub fn from_parts(weights: Vec<f64>, phases: Vec<f64>, amplitude: f64) -> Result<Self> {
        if phases.is_empty() || weights.len() % phases.len() != 0 || weights.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} frequencies do not fit {} phases",
                weights.len(),
                phases.len()
            )));
        }
        let dim = weights.len() / phases.len();
        Ok(Self {
            weights,
            phases,
            amplitude,
            dim,
        })
    }

    pub fn n_features(&self) -> usize {
        self.phases.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Frequency vector of feature `j`.
    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, (o, b)) in out.iter_mut().zip(&self.phases).enumerate() {
            let w = self.frequency(j);
            let arg: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b;
            *o = self.amplitude * arg.cos();
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        self.features_into(x, &mut out);
        out
    }

    /// `n × F` matrix of features, one row per input.
    pub fn feature_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.n_features());
        let mut row = vec![0.0; self.n_features()];
        for (i, x) in xs.iter().enumerate() {
            self.features_into(x, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    /// `φ(x)ᵀφ(x2)`, an unbiased estimate of `k(x, x2)`.
    pub fn kernel_estimate(&self, x: &[f64], x2: &[f64]) -> f64 {
        let a = self.features(x);
        let b = self.features(x2);
        a.iter().zip(&b).map(|(u, v)| u * v).sum()
    }

    #[inline]
    fn eval_weighted(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (j, (t, b)) in theta.iter().zip(&self.phases).enumerate() {
            let w = self.frequency(j);
            let arg: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b;
            s += t * arg.cos();
        }
        self.amplitude * s
    }
}

/// Draws frequencies from the SE spectral density `N(0, diag(θ⁻²))` and
/// phases from `U[0, 2π)`.
pub fn draw_rff_basis(params: &KernelParams, n_features: usize, seed: u64) -> Result<RffBasis> {
    params.validate()?;
    if n_features == 0 {
        return Err(Error::InvalidArgument("at least one feature is required".into()));
    }
    let dim = params.dim();
    let mut rng = rng_from(seed, &[]);
    let mut weights = Vec::with_capacity(n_features * dim);
    for _ in 0..n_features {
        for l in &params.length_scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            weights.push(z / l);
        }
    }
    let phases = (0..n_features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    RffBasis::from_parts(weights, phases, (2.0 * params.output_scale / n_features as f64).sqrt())
}

/// `f(x) = θᵀφ(x)` for a fixed basis.
#[derive(Clone, Debug)]
pub struct SamplePath {
    basis: Arc<RffBasis>,
    theta: Vec<f64>,
}

impl SamplePath {
    pub fn new(basis: Arc<RffBasis>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != basis.n_features() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_features(),
                got: theta.len(),
            });
        }
        Ok(Self { basis, theta })
    }

    pub fn basis(&self) -> &Arc<RffBasis> {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.basis.eval_weighted(&self.theta, x)
    }
}

/// Draws `count` weight vectors from the Bayesian linear model posterior
/// given `data`, with prior `θ ~ N(0, I)`.
///
/// Uses the exact pathwise identity
/// `θ = θ₀ + Φᵀ(ΦΦᵀ + Σ)⁻¹(y − Φθ₀ − ε₀)`, which needs one `n × n`
/// factorization shared by all draws. Path `i` uses the stream `(seed, i)`.
pub fn draw_sample_paths(
    basis: &Arc<RffBasis>,
    data: &[Observation],
    count: usize,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    let f = basis.n_features();
    let n = data.len();
    if let Some(o) = data.iter().find(|o| o.x.len() != basis.dim()) {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: o.x.len(),
        });
    }
    let mut thetas = DMatrix::<f64>::zeros(f, count);
    let mut eps = DMatrix::<f64>::zeros(n, count);
    for c in 0..count {
        let mut rng = rng_from(seed, &[c as u64]);
        for j in 0..f {
            thetas[(j, c)] = StandardNormal.sample(&mut rng);
        }
        for (i, o) in data.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            eps[(i, c)] = o.noise_variance.sqrt() * z;
        }
    }
    if n > 0 {
        let xs: Vec<Vec<f64>> = data.iter().map(|o| o.x.clone()).collect();
        let phi = basis.feature_matrix(&xs);
        let y = DVector::from_iterator(n, data.iter().map(|o| o.y));
        // residuals r = y − Φθ₀ − ε₀, one column per draw
        let mut resid = -(&phi * &thetas) - eps;
        for mut col in resid.column_iter_mut() {
            col += &y;
        }
        let gram = &phi * phi.transpose();
        let scale = 0.5 * basis.amplitude() * basis.amplitude() * f as f64;
        let chol = factor_with_jitter(gram, data, scale)?;
        let alpha = chol.solve(&resid);
        thetas += phi.transpose() * alpha;
    }
    Ok((0..count)
        .map(|c| SamplePath {
            basis: basis.clone(),
            theta: thetas.column(c).iter().copied().collect(),
        })
        .collect())
}

fn factor_with_jitter(
    gram: DMatrix<f64>,
    data: &[Observation],
    output_scale: f64,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let mut jitter = 0.0;
    loop {
        let mut a = gram.clone();
        for (i, o) in data.iter().enumerate() {
            a[(i, i)] += o.noise_variance + jitter;
        }
        if let Some(c) = a.cholesky() {
            return Ok(c);
        }
        jitter = if jitter == 0.0 { JITTER_REL * output_scale } else { jitter * 10.0 };
        if jitter > MAX_JITTER_REL * output_scale * 1.000_001 {
            return Err(Error::NotPositiveDefinite {
                size: data.len(),
                jitter: jitter / 10.0,
            });
        }
    }
}

/// A single posterior weight draw; see [`draw_sample_paths`].
pub fn draw_sample_path(basis: &Arc<RffBasis>, data: &[Observation], seed: u64) -> Result<SamplePath> {
    Ok(draw_sample_paths(basis, data, 1, seed)?.remove(0))
}

/// Jointly sampled optimum location and noiseless optimal value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptPair {
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

/// Maximizes a path over a Sobol grid plus `extra` candidates, then refines
/// the best point by coordinate golden-section search.
pub fn maximize_path(
    path: &SamplePath,
    bounds: &Bounds,
    grid_size: usize,
    extra: &[Vec<f64>],
    refine_iters: usize,
    seed: u64,
) -> OptPair {
    let m = crate::search::maximize(|x| path.eval(x), bounds, grid_size, extra, refine_iters, seed);
    OptPair {
        x_star: m.x,
        f_star: m.value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_features: usize,
    /// `None` selects `max(2000, 500·D)`.
    pub grid_size: Option<usize>,
    pub refine_iters: usize,
    /// Draw all paths of one call from a single basis. Each path is still an
    /// independent posterior draw given that basis.
    pub shared_basis: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_features: 1024,
            grid_size: None,
            refine_iters: 2,
            shared_basis: true,
        }
    }
}

impl SamplerConfig {
    pub fn grid_size_for(&self, dim: usize) -> usize {
        self.grid_size.unwrap_or_else(|| default_grid_size(dim))
    }
}

/// Draws `l` opt-pairs from the posterior. Deterministic given `seed`.
pub fn sample_opt_pairs(
    posterior: &GpPosterior,
    bounds: &Bounds,
    l: usize,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Vec<OptPair>> {
    if l == 0 {
        return Err(Error::InvalidArgument("at least one opt-pair is required".into()));
    }
    let dim = bounds.dim();
    if posterior.params().dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: posterior.params().dim(),
        });
    }
    let data = posterior.data();
    let grid_size = config.grid_size_for(dim);
    let mut candidates = sobol_grid(bounds, grid_size, derive_seed(seed, &[0]));
    candidates.extend(data.iter().map(|o| o.x.clone()).filter(|x| bounds.contains(x)));
    let step = grid_step(grid_size, dim);

    let groups: Vec<(u64, usize)> = if config.shared_basis {
        vec![(derive_seed(seed, &[1]), l)]
    } else {
        (0..l).map(|i| (derive_seed(seed, &[2, i as u64]), 1)).collect()
    };
    let mut pairs = Vec::with_capacity(l);
    for (group_seed, count) in groups {
        let basis = Arc::new(draw_rff_basis(posterior.params(), config.n_features, group_seed)?);
        let paths = draw_sample_paths(&basis, data, count, derive_seed(group_seed, &[1]))?;
        let phi = basis.feature_matrix(&candidates);
        let theta = DMatrix::from_fn(basis.n_features(), count, |j, c| paths[c].theta[j]);
        let values = phi * theta;
        for (c, path) in paths.iter().enumerate() {
            let col: Vec<f64> = values.column(c).iter().copied().collect();
            let (i, value) = argmax(&col).expect("non-empty candidate set");
            let start = Maximum {
                x: candidates[i].clone(),
                value,
            };
            let mut f = |x: &[f64]| path.eval(x);
            let best = refine(&mut f, bounds, start, config.refine_iters, step);
            pairs.push(separate_from_data(path, bounds, best, data));
        }
    }
    Ok(pairs)
}

/// Nudges `x*` off any training input it coincides with, so conditioning on
/// the pair keeps the Gram matrix non-singular.
fn separate_from_data(path: &SamplePath, bounds: &Bounds, best: Maximum, data: &[Observation]) -> OptPair {
    let mut x = best.x;
    let mut f_star = best.value;
    let clash = |x: &[f64]| {
        data.iter()
            .any(|o| o.x.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9))
    };
    if clash(&x) {
        for d in 0..x.len() {
            let delta = 1e-6 * bounds.width(d);
            x[d] = if x[d] + delta <= bounds.upper()[d] { x[d] + delta } else { x[d] - delta };
        }
        f_star = path.eval(&x);
    }
    OptPair { x_star: x, f_star }
}
