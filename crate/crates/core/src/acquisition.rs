//! Acquisition functions: Joint Entropy Search, Max-value Entropy Search and
//! Expected Improvement. All follow the maximization convention.

use crate::gauss::{entropy_of_variance, log_norm_cdf, norm_cdf, norm_pdf, truncated_moments};
use crate::gp::{GpPosterior, Observation};
use crate::sampler::OptPair;
use crate::search::{maximize, Bounds, Maximum};
use crate::{Error, Result};

/// `E[(f - incumbent)⁺]` for `f ~ N(mean, sd²)`.
pub fn ei_from_moments(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let diff = mean - incumbent;
    if sd < 1e-12 {
        return diff.max(0.0);
    }
    let z = diff / sd;
    (diff * norm_cdf(z) + sd * norm_pdf(z)).max(0.0)
}

pub fn expected_improvement(posterior: &GpPosterior, x: &[f64], incumbent: f64) -> Result<f64> {
    let p = posterior.predict(x)?;
    Ok(ei_from_moments(p.mean, p.var_f.sqrt(), incumbent))
}

/// Smallest standardized gap `(f* - m)/s` used by MES.
pub const MES_MIN_GAMMA: f64 = 1e-8;

/// Mean over `f_stars` of `γφ(γ)/(2Φ(γ)) - ln Φ(γ)`, `γ = (f* - m)/s`.
pub fn mes_from_moments(mean: f64, sd: f64, f_stars: &[f64]) -> f64 {
    if sd < 1e-12 || f_stars.is_empty() {
        return 0.0;
    }
    let total: f64 = f_stars
        .iter()
        .map(|f| {
            let g = ((f - mean) / sd).max(MES_MIN_GAMMA);
            let cdf = norm_cdf(g);
            g * norm_pdf(g) / (2.0 * cdf) - log_norm_cdf(g)
        })
        .sum();
    (total / f_stars.len() as f64).max(0.0)
}

pub fn mes(posterior: &GpPosterior, x: &[f64], f_stars: &[f64]) -> Result<f64> {
    if f_stars.is_empty() {
        return Err(Error::InvalidArgument("MES needs at least one f* sample".into()));
    }
    let p = posterior.predict(x)?;
    Ok(mes_from_moments(p.mean, p.var_f.sqrt(), f_stars))
}

/// The base posterior plus one posterior per opt-pair, each conditioned on
/// its pair as a (jitter-noise) observation.
#[derive(Clone, Debug)]
pub struct ConditionedEnsemble {
    base: GpPosterior,
    members: Vec<(OptPair, GpPosterior)>,
    noise_variance: f64,
}

pub fn build_conditioned_ensemble(posterior: &GpPosterior, pairs: &[OptPair]) -> Result<ConditionedEnsemble> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("the ensemble needs at least one opt-pair".into()));
    }
    let jitter = posterior.params().jitter();
    let members = pairs
        .iter()
        .map(|pair| {
            let obs = Observation::new(pair.x_star.clone(), pair.f_star, jitter);
            Ok((pair.clone(), posterior.extend(obs)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionedEnsemble {
        base: posterior.clone(),
        members,
        // Keeps both entropies finite for noiseless models.
        noise_variance: posterior.params().noise_variance.max(jitter),
    })
}

/// JES split into the entropy drop from conditioning on the opt-pairs and the
/// further drop from truncating `f` at `f*`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JesDecomposition {
    pub value: f64,
    pub conditioning: f64,
    pub truncation: f64,
}

impl ConditionedEnsemble {
    pub fn base(&self) -> &GpPosterior {
        &self.base
    }

    pub fn members(&self) -> &[(OptPair, GpPosterior)] {
        &self.members
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Evaluates the JES terms at `x`; `v` is scratch space.
    fn decompose_with(&self, x: &[f64], v: &mut Vec<f64>) -> JesDecomposition {
        let (base_mean, base_raw) = self.base.whitened_cross(x, v);
        let base_var = self.base.clamp_variance(base_raw);
        let h_base = entropy_of_variance(base_var + self.noise_variance);
        let mut h_cond = 0.0;
        let mut h_trunc = 0.0;
        for (pair, member) in &self.members {
            let (m, raw) = member.predict_from_base(x, v, base_mean, base_raw);
            let s = member.clamp_variance(raw).min(base_var);
            let t = truncated_moments(m, s, pair.f_star).variance.min(s);
            h_cond += entropy_of_variance(s + self.noise_variance);
            h_trunc += entropy_of_variance(t + self.noise_variance);
        }
        let l = self.members.len() as f64;
        let (h_cond, h_trunc) = (h_cond / l, h_trunc / l);
        JesDecomposition {
            value: h_base - h_trunc,
            conditioning: h_base - h_cond,
            truncation: h_cond - h_trunc,
        }
    }

    pub fn decompose(&self, x: &[f64]) -> Result<JesDecomposition> {
        if x.len() != self.base.params().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.base.params().dim(),
                got: x.len(),
            });
        }
        let mut v = Vec::with_capacity(self.base.len());
        Ok(self.decompose_with(x, &mut v))
    }

    /// A reusable evaluator that avoids reallocating scratch space.
    pub fn evaluator(&self) -> impl FnMut(&[f64]) -> f64 + '_ {
        let mut v = Vec::with_capacity(self.base.len());
        move |x| self.decompose_with(x, &mut v).value
    }
}

/// `H[y | D, x] - mean_ℓ H[y | D ∪ (x*_ℓ, f*_ℓ), x, f ≤ f*_ℓ]`, in nats, with
/// the truncated distribution replaced by its moment-matched Gaussian.
pub fn jes(ensemble: &ConditionedEnsemble, x: &[f64]) -> Result<f64> {
    Ok(ensemble.decompose(x)?.value)
}

/// Grid-plus-refinement maximization of an acquisition function.
pub fn optimize_acquisition<F>(acq: F, bounds: &Bounds, grid_size: usize, refine_iters: usize, seed: u64) -> Maximum
where
    F: FnMut(&[f64]) -> f64,
{
    maximize(acq, bounds, grid_size, &[], refine_iters, seed)
}
