//! Box bounds, scrambled Sobol grids and derivative-free local refinement.
//!
//! Every inner maximization in the crate (sample paths, acquisitions, the
//! posterior mean, benchmark oracles) is a dense grid pass followed by
//! coordinate-wise golden-section refinement from the best grid point.

use serde::{Deserialize, Serialize};

use crate::rng::derive_seed;
use crate::{Error, Result};

/// Axis-aligned box `[lower_d, upper_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("bounds need at least one dimension".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidArgument(format!("invalid interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(d, v)| self.lower[d] + v * self.width(d))
            .collect()
    }
}

const SOBOL_CHUNK: usize = 1 << 16;

/// `n` points of an Owen-scrambled Sobol sequence mapped into `bounds`.
///
/// The underlying generator supports 2^16 points per scramble; longer grids
/// are assembled from independently scrambled chunks.
pub fn sobol_grid(bounds: &Bounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = bounds.dim();
    assert!(
        dim <= sobol_burley::NUM_DIMENSIONS as usize,
        "Sobol grid supports at most {} dimensions",
        sobol_burley::NUM_DIMENSIONS
    );
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let chunk = (i / SOBOL_CHUNK) as u64;
        let index = (i % SOBOL_CHUNK) as u32;
        let scramble = derive_seed(seed, &[chunk]) as u32;
        let u: Vec<f64> = (0..dim)
            .map(|d| sobol_burley::sample(index, d as u32, scramble) as f64)
            .collect();
        points.push(bounds.from_unit(&u));
    }
    points
}

/// Default dense-grid size: `max(2000, 500·D)`.
pub fn default_grid_size(dim: usize) -> usize {
    (500 * dim).max(2000)
}

/// Location and value of a (local) maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
}

const GOLDEN_EVALS: usize = 10;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Coordinate-wise golden-section refinement.
///
/// Each of the `iters` passes runs a short golden-section search along every
/// coordinate inside a bracket of half-width `step·width_d` around the
/// current point, then halves `step`. Only strict improvements are accepted,
/// so the returned value is never below `start.value`.
pub fn refine<F>(f: &mut F, bounds: &Bounds, start: Maximum, iters: usize, step: f64) -> Maximum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best = start;
    let mut step = step;
    let mut probe = best.x.clone();
    for _ in 0..iters {
        for d in 0..bounds.dim() {
            let half = step * bounds.width(d);
            let mut a = (best.x[d] - half).max(bounds.lower()[d]);
            let mut b = (best.x[d] + half).min(bounds.upper()[d]);
            if b <= a {
                continue;
            }
            probe.copy_from_slice(&best.x);
            let mut eval = |t: f64, probe: &mut Vec<f64>, best: &mut Maximum| {
                probe[d] = t;
                let v = sanitize(f(probe));
                if v > best.value {
                    best.value = v;
                    best.x[d] = t;
                }
                v
            };
            let mut c = b - INV_PHI * (b - a);
            let mut e = a + INV_PHI * (b - a);
            let mut fc = eval(c, &mut probe, &mut best);
            let mut fe = eval(e, &mut probe, &mut best);
            for _ in 2..GOLDEN_EVALS {
                if fc >= fe {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - INV_PHI * (b - a);
                    fc = eval(c, &mut probe, &mut best);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + INV_PHI * (b - a);
                    fe = eval(e, &mut probe, &mut best);
                }
            }
        }
        step *= 0.5;
    }
    best
}

/// Typical spacing, as a fraction of the box width, of an `n`-point grid.
pub fn grid_step(n: usize, dim: usize) -> f64 {
    (n.max(1) as f64).powf(-1.0 / dim as f64).min(0.5)
}

/// Index and value of the largest entry; ties keep the lowest index.
pub fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        let v = sanitize(v);
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Grid-plus-refinement maximization of `f` over `bounds`.
///
/// Evaluates `grid_size` Sobol points followed by the `extra` candidates,
/// then refines from the best one (lowest index on ties).
pub fn maximize<F>(
    mut f: F,
    bounds: &Bounds,
    grid_size: usize,
    extra: &[Vec<f64>],
    refine_iters: usize,
    seed: u64,
) -> Maximum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut candidates = sobol_grid(bounds, grid_size.max(1), seed);
    candidates.extend(extra.iter().filter(|x| bounds.contains(x)).cloned());
    let values: Vec<f64> = candidates.iter().map(|x| f(x)).collect();
    let (i, value) = argmax(&values).expect("at least one candidate");
    let start = Maximum {
        x: candidates.swap_remove(i),
        value,
    };
    refine(&mut f, bounds, start, refine_iters, grid_step(grid_size, bounds.dim()))
}

/// Like [`maximize`], but refines the `top_k` best grid points and keeps the
/// overall best.
pub fn maximize_multistart<F>(
    mut f: F,
    bounds: &Bounds,
    grid_size: usize,
    top_k: usize,
    refine_iters: usize,
    seed: u64,
) -> Maximum
where
    F: FnMut(&[f64]) -> f64,
{
    let candidates = sobol_grid(bounds, grid_size.max(1), seed);
    let values: Vec<f64> = candidates.iter().map(|x| sanitize(f(x))).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let step = grid_step(grid_size, bounds.dim());
    let mut best: Option<Maximum> = None;
    for &i in order.iter().take(top_k.max(1)) {
        let start = Maximum {
            x: candidates[i].clone(),
            value: values[i],
        };
        let m = refine(&mut f, bounds, start, refine_iters, step);
        if best.as_ref().map_or(true, |b| m.value > b.value) {
            best = Some(m);
        }
    }
    best.expect("at least one candidate")
}
