//! Scalar Gaussian utilities.
//!
//! Everything here works in nats. The truncated-moment routines switch to a
//! continued-fraction evaluation of the Mills ratio below `β = -6`, where the
//! direct `φ(β)/Φ(β)` quotient starts to lose digits.

use rand::seq::SliceRandom;
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::rng_from;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this standardized bound the Mills ratio is evaluated by continued
/// fraction.
const DEEP_TRUNCATION: f64 = -6.0;
const MILLS_TERMS: usize = 80;

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile function; `p` outside `(0, 1)` maps to ±∞.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal density and distribution function at `z`.
pub fn std_normal(z: f64) -> (f64, f64) {
    (norm_pdf(z), norm_cdf(z))
}

/// Backward-evaluated tails of the Laplace continued fraction
/// `Φ(-t)/φ(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))`.
///
/// Returns `(tail0, tail1, tail2)` where `tail_k = t + (k+1)/tail_{k+1}`, so
/// the inverse Mills ratio `φ(-t)/Φ(-t)` equals `tail0`.
fn mills_tails(t: f64) -> (f64, f64, f64) {
    let mut tail = t;
    for k in (3..=MILLS_TERMS).rev() {
        tail = t + k as f64 / tail;
    }
    let tail2 = tail;
    let tail1 = t + 2.0 / tail2;
    let tail0 = t + 1.0 / tail1;
    (tail0, tail1, tail2)
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < DEEP_TRUNCATION {
        let (tail0, _, _) = mills_tails(-z);
        -0.5 * z * z - 0.5 * LN_2PI - tail0.ln()
    } else if z > 0.0 {
        (-0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// Inverse Mills ratio `λ(β) = φ(β)/Φ(β)`.
pub fn inverse_mills(beta: f64) -> f64 {
    if beta < DEEP_TRUNCATION {
        mills_tails(-beta).0
    } else {
        norm_pdf(beta) / norm_cdf(beta)
    }
}

/// Moments of `N(mu, var)` conditioned on lying below `upper`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
    /// `ln Φ(β)`: log of the probability mass kept by the truncation.
    pub log_mass: f64,
}

/// Mean and variance of an upper-truncated Gaussian.
///
/// A non-positive `var` is treated as a point mass at `mu`.
pub fn truncated_moments(mu: f64, var: f64, upper: f64) -> TruncatedMoments {
    if var <= 0.0 {
        let inside = mu <= upper;
        return TruncatedMoments {
            mean: mu.min(upper),
            variance: 0.0,
            log_mass: if inside { 0.0 } else { f64::NEG_INFINITY },
        };
    }
    let sd = var.sqrt();
    let beta = (upper - mu) / sd;
    if beta < DEEP_TRUNCATION {
        // With t = -β: λ = tail0, λ + β = 1/tail1 and
        // 1 - βλ - λ² = (2/tail2 - 1/tail1) / tail1, all free of cancellation.
        let (tail0, tail1, tail2) = mills_tails(-beta);
        let factor = ((2.0 / tail2 - 1.0 / tail1) / tail1).clamp(0.0, 1.0);
        TruncatedMoments {
            mean: upper - sd / tail1,
            variance: var * factor,
            log_mass: -0.5 * beta * beta - 0.5 * LN_2PI - tail0.ln(),
        }
    } else {
        let lambda = inverse_mills(beta);
        let factor = (1.0 - beta * lambda - lambda * lambda).clamp(0.0, 1.0);
        TruncatedMoments {
            mean: mu - sd * lambda,
            variance: var * factor,
            log_mass: log_norm_cdf(beta),
        }
    }
}

/// Differential entropy `½ ln(2πe·var)` of a Gaussian, in nats.
pub fn gaussian_entropy(var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Gaussian entropy needs a positive finite variance, got {var}"
        )));
    }
    Ok(entropy_of_variance(var))
}

#[inline]
pub(crate) fn entropy_of_variance(var: f64) -> f64 {
    0.5 * (LN_2PI + 1.0 + var.ln())
}

/// Monte Carlo entropy estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEntropy {
    pub entropy: f64,
    pub std_err: f64,
}

/// Log density of `y = f + ε` with `f ~ N(mu, var_f)` truncated above at
/// `upper` and `ε ~ N(0, var_noise)`.
///
/// The convolution has the extended-skew-normal closed form
/// `N(y; mu, var_f + var_noise) · Φ((upper - m_c)/s_c) / Φ(β)` where `m_c`,
/// `s_c` are the moments of `f | y` without truncation.
pub fn truncated_sum_log_density(y: f64, mu: f64, var_f: f64, var_noise: f64, upper: f64) -> f64 {
    let log_mass = log_norm_cdf((upper - mu) / var_f.sqrt());
    if var_noise <= 0.0 {
        if y > upper {
            return f64::NEG_INFINITY;
        }
        return -0.5 * (LN_2PI + var_f.ln()) - 0.5 * (y - mu).powi(2) / var_f - log_mass;
    }
    let total = var_f + var_noise;
    let cond_mean = mu + var_f / total * (y - mu);
    let cond_sd = (var_f * var_noise / total).sqrt();
    -0.5 * (LN_2PI + total.ln()) - 0.5 * (y - mu).powi(2) / total
        + log_norm_cdf((upper - cond_mean) / cond_sd)
        - log_mass
}

/// Independent Latin hypercube replicates behind [`mc_truncation_entropy`].
const MC_REPLICATES: usize = 20;

/// Sampling-based entropy of `y = f_trunc + ε` (see
/// [`truncated_sum_log_density`]), computed as `-mean(ln p(y_i))`.
///
/// Samples come from independent Latin hypercube replicates over the two
/// inverse-CDF uniforms; the standard error is the spread of the replicate
/// means. Converges to the exact entropy as `n_samples` grows; this is the
/// reference against which the moment-matched Gaussian entropy is compared.
pub fn mc_truncation_entropy(
    mu: f64,
    var_f: f64,
    var_noise: f64,
    upper: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEntropy> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "MC entropy needs at least 1000 samples, got {n_samples}"
        )));
    }
    if !(var_f > 0.0) || var_noise < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need var_f > 0 and var_noise >= 0, got {var_f}, {var_noise}"
        )));
    }
    let sd_f = var_f.sqrt();
    let sd_noise = var_noise.sqrt();
    let beta = (upper - mu) / sd_f;
    let mass = norm_cdf(beta);
    if mass <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "truncation at β = {beta} leaves no representable mass"
        )));
    }
    let standard = Normal::standard();
    let mut rng = rng_from(seed, &[0x6d63]);
    let per = n_samples / MC_REPLICATES;
    let mut means = Vec::with_capacity(MC_REPLICATES);
    let mut order: Vec<usize> = (0..per).collect();
    for _ in 0..MC_REPLICATES {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (i, &j) in order.iter().enumerate() {
            // Stratified uniforms kept strictly inside (0, 1).
            let u = ((i as f64 + rng.random::<f64>()) / per as f64).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
            let v = ((j as f64 + rng.random::<f64>()) / per as f64).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
            let z = standard.inverse_cdf(u * mass).min(beta);
            let y = mu + sd_f * z + sd_noise * standard.inverse_cdf(v);
            sum += truncated_sum_log_density(y, mu, var_f, var_noise, upper);
        }
        means.push(sum / per as f64);
    }
    let r = MC_REPLICATES as f64;
    let mean = means.iter().sum::<f64>() / r;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(McEntropy {
        entropy: -mean,
        std_err: (var / r).sqrt(),
    })
}
