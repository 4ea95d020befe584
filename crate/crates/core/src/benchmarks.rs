//! Benchmark objectives, all posed as maximization: GP sample paths drawn
//! from a fixed RFF expansion and the usual synthetic test functions
//! (negated).

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gp::KernelParams;
use crate::rng::{derive_seed, rng_from};
use crate::sampler::{draw_rff_basis, draw_sample_path, OptPair, SamplePath};
use crate::search::{maximize_multistart, refine, Bounds, Maximum};
use crate::{Error, Result};

/// Features in the fixed expansion that defines a GP-sample task.
pub const GP_TASK_FEATURES: usize = 1024;
/// Default oracle budget (grid points) for the true optimum.
pub const ORACLE_BUDGET: usize = 100_000;
const ORACLE_TOP_K: usize = 10;
const ORACLE_REFINE_ITERS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticFunction {
    Branin,
    Hartmann3,
    Hartmann6,
    Levy8,
    Michalewicz10,
}

impl SyntheticFunction {
    pub const ALL: [SyntheticFunction; 5] = [
        SyntheticFunction::Branin,
        SyntheticFunction::Hartmann3,
        SyntheticFunction::Hartmann6,
        SyntheticFunction::Levy8,
        SyntheticFunction::Michalewicz10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Branin => "branin",
            Self::Hartmann3 => "hartmann3",
            Self::Hartmann6 => "hartmann6",
            Self::Levy8 => "levy8",
            Self::Michalewicz10 => "michalewicz10",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Branin => 2,
            Self::Hartmann3 => 3,
            Self::Hartmann6 => 6,
            Self::Levy8 => 8,
            Self::Michalewicz10 => 10,
        }
    }

    pub fn bounds(self) -> Bounds {
        let d = self.dim();
        match self {
            Self::Branin => Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).expect("valid box"),
            Self::Hartmann3 | Self::Hartmann6 => Bounds::unit(d),
            Self::Levy8 => Bounds::new(vec![-10.0; d], vec![10.0; d]).expect("valid box"),
            Self::Michalewicz10 => Bounds::new(vec![0.0; d], vec![PI; d]).expect("valid box"),
        }
    }

    /// Literature minimizer, where one is known.
    pub fn known_minimizer(self) -> Option<Vec<f64>> {
        match self {
            Self::Branin => Some(vec![PI, 2.275]),
            Self::Hartmann3 => Some(vec![0.114614, 0.555649, 0.852547]),
            Self::Hartmann6 => Some(vec![0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573]),
            Self::Levy8 => Some(vec![1.0; 8]),
            Self::Michalewicz10 => None,
        }
    }

    /// The standard (minimization) form.
    fn minimization_value(self, x: &[f64]) -> f64 {
        match self {
            Self::Branin => branin(x),
            Self::Hartmann3 => hartmann(x, &HARTMANN3_A, &HARTMANN3_P),
            Self::Hartmann6 => hartmann(x, &HARTMANN6_A, &HARTMANN6_P),
            Self::Levy8 => levy(x),
            Self::Michalewicz10 => michalewicz(x),
        }
    }
}

impl std::str::FromStr for SyntheticFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic function {s:?}")))
    }
}

fn branin(x: &[f64]) -> f64 {
    let (a, b, c, r, s, t) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
    a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN3_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];
const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann<const D: usize>(x: &[f64], a: &[[f64; D]; 4], p: &[[f64; D]; 4]) -> f64 {
    -(0..4)
        .map(|i| {
            let r: f64 = (0..D).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-r).exp()
        })
        .sum::<f64>()
}

fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let last = w[w.len() - 1];
    let middle: f64 = w[..w.len() - 1]
        .iter()
        .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
        .sum();
    (PI * w[0]).sin().powi(2) + middle + (last - 1.0).powi(2) * (1.0 + (2.0 * PI * last).sin().powi(2))
}

fn michalewicz(x: &[f64]) -> f64 {
    const M: i32 = 10;
    -x.iter()
        .enumerate()
        .map(|(i, v)| v.sin() * ((i + 1) as f64 * v * v / PI).sin().powi(2 * M))
        .sum::<f64>()
}

/// Negated synthetic function value at `x` (so larger is better).
pub fn synthetic_eval(function: SyntheticFunction, x: &[f64]) -> Result<f64> {
    if !function.bounds().contains(x) {
        return Err(Error::OutOfDomain {
            function: function.name().to_string(),
            x: x.to_vec(),
        });
    }
    Ok(-function.minimization_value(x))
}

/// Serializable description from which a task is rebuilt exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    GpSample {
        dim: usize,
        seed: u64,
        /// Overrides the default observation noise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_variance: Option<f64>,
    },
    Synthetic {
        function: SyntheticFunction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_variance: Option<f64>,
    },
}

impl TaskSpec {
    pub fn build(&self) -> Result<Task> {
        match *self {
            TaskSpec::GpSample {
                dim,
                seed,
                noise_variance,
            } => {
                let task = make_gp_sample_task(dim, seed)?;
                match noise_variance {
                    Some(v) => task.with_noise_variance(v),
                    None => Ok(task),
                }
            }
            TaskSpec::Synthetic {
                function,
                noise_variance,
            } => {
                let task = make_synthetic_task(function)?;
                match noise_variance {
                    Some(v) => task.with_noise_variance(v),
                    None => Ok(task),
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Objective {
    Path(SamplePath),
    Synthetic(SyntheticFunction),
}

/// A black-box maximization problem with a known (estimated) optimum.
#[derive(Clone, Debug)]
pub struct Task {
    name: String,
    spec: TaskSpec,
    bounds: Bounds,
    noise_variance: f64,
    kernel: Option<KernelParams>,
    objective: Objective,
    true_opt: OptPair,
}

impl Task {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Generating kernel of a GP-sample task, including its noise variance.
    pub fn kernel_params(&self) -> Option<KernelParams> {
        self.kernel.clone().map(|mut k| {
            k.noise_variance = self.noise_variance;
            k
        })
    }

    /// Oracle optimum in maximization form.
    pub fn true_opt(&self) -> &OptPair {
        &self.true_opt
    }

    /// Descriptor as JSON.
    pub fn descriptor(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "spec": self.spec,
            "dimension": self.dim(),
            "bounds": self.bounds,
            "noise_variance": self.noise_variance,
            "kernel": self.kernel_params(),
            "true_opt": self.true_opt,
        })
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Result<Self> {
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance {noise_variance} is negative")));
        }
        self.noise_variance = noise_variance;
        match &mut self.spec {
            TaskSpec::GpSample { noise_variance: v, .. } | TaskSpec::Synthetic { noise_variance: v, .. } => {
                *v = Some(noise_variance)
            }
        }
        Ok(self)
    }

    /// Noiseless objective value.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match &self.objective {
            Objective::Synthetic(f) => synthetic_eval(*f, x),
            Objective::Path(path) => {
                if !self.bounds.contains(x) {
                    return Err(Error::OutOfDomain {
                        function: self.name.clone(),
                        x: x.to_vec(),
                    });
                }
                Ok(path.eval(x))
            }
        }
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.objective {
            Objective::Synthetic(f) => -f.minimization_value(x),
            Objective::Path(path) => path.eval(x),
        }
    }
}

/// Length scale of the GP-sample task family for dimension `dim`.
pub fn gp_task_length_scale(dim: usize) -> Result<f64> {
    match dim {
        2 => Ok(0.1),
        4 => Ok(0.2),
        6 => Ok(0.3),
        12 => Ok(0.6),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// A fixed prior draw of a GP on `[0,1]^D`: `σ² = 10`, `σ_ε² = 0.01`.
pub fn make_gp_sample_task(dim: usize, seed: u64) -> Result<Task> {
    let params = KernelParams::isotropic(dim, gp_task_length_scale(dim)?, 10.0, 0.01)?;
    let basis = Arc::new(draw_rff_basis(&params, GP_TASK_FEATURES, derive_seed(seed, &[0]))?);
    let path = draw_sample_path(&basis, &[], derive_seed(seed, &[1]))?;
    let mut task = Task {
        name: format!("gp{dim}d_s{seed}"),
        spec: TaskSpec::GpSample {
            dim,
            seed,
            noise_variance: None,
        },
        bounds: Bounds::unit(dim),
        noise_variance: params.noise_variance,
        kernel: Some(params),
        objective: Objective::Path(path),
        true_opt: OptPair {
            x_star: vec![0.5; dim],
            f_star: f64::NEG_INFINITY,
        },
    };
    task.true_opt = estimate_true_optimum(&task, ORACLE_BUDGET, derive_seed(seed, &[2]))?;
    Ok(task)
}

/// A synthetic function task with the default noise `σ_ε² = 0.01`.
pub fn make_synthetic_task(function: SyntheticFunction) -> Result<Task> {
    let mut task = Task {
        name: function.name().to_string(),
        spec: TaskSpec::Synthetic {
            function,
            noise_variance: None,
        },
        bounds: function.bounds(),
        noise_variance: 0.01,
        kernel: None,
        objective: Objective::Synthetic(function),
        true_opt: OptPair {
            x_star: function.bounds().from_unit(&vec![0.5; function.dim()]),
            f_star: f64::NEG_INFINITY,
        },
    };
    let budget = if function.dim() <= 3 { ORACLE_BUDGET } else { 50_000 };
    task.true_opt = estimate_true_optimum(&task, budget, 0)?;
    Ok(task)
}

/// Dense Sobol search of `budget` points, then coordinate refinement from the
/// ten best; for synthetic functions the literature optimum (refined) also
/// competes. Never returns less than the task's current oracle value.
pub fn estimate_true_optimum(task: &Task, budget: usize, seed: u64) -> Result<OptPair> {
    if budget < 1000 {
        return Err(Error::InvalidArgument(format!("oracle budget {budget} is below 1000")));
    }
    let bounds = task.bounds();
    let mut best = maximize_multistart(|x| task.eval_unchecked(x), bounds, budget, ORACLE_TOP_K, ORACLE_REFINE_ITERS, seed);
    if let Objective::Synthetic(f) = task.objective {
        if let Some(x) = f.known_minimizer() {
            let start = Maximum {
                value: task.eval_unchecked(&x),
                x,
            };
            let step = 1e-3;
            let m = refine(&mut |x: &[f64]| task.eval_unchecked(x), bounds, start, ORACLE_REFINE_ITERS, step);
            if m.value > best.value {
                best = m;
            }
        }
    }
    if task.true_opt.f_star > best.value {
        return Ok(task.true_opt.clone());
    }
    Ok(OptPair {
        x_star: best.x,
        f_star: best.value,
    })
}

/// `f(x) + ε` with `ε ~ N(0, σ_ε²)` drawn from the stream `noise_seed`.
pub fn observe(task: &Task, x: &[f64], noise_seed: u64) -> Result<f64> {
    let f = task.eval(x)?;
    if task.noise_variance == 0.0 {
        return Ok(f);
    }
    let z: f64 = StandardNormal.sample(&mut rng_from(noise_seed, &[]));
    Ok(f + task.noise_variance.sqrt() * z)
}

/// `(simple, inference)` regret against the optimum value `f_opt`.
pub fn regrets(f_opt: f64, best_queried_value: f64, recommendation_value: f64) -> (f64, f64) {
    (f_opt - best_queried_value, f_opt - recommendation_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use crate::search::sobol_grid;

    #[test]
    fn reference_values() {
        // Minimization values from an independent implementation.
        let cases: [(SyntheticFunction, Vec<f64>, f64); 10] = [
            (SyntheticFunction::Branin, vec![PI, 2.275], 0.39788735772973816),
            (SyntheticFunction::Branin, vec![0.0, 0.0], 55.602112642270264),
            (SyntheticFunction::Branin, vec![7.3, 11.1], 111.76035596030671),
            (SyntheticFunction::Hartmann3, vec![0.114614, 0.555649, 0.852547], -3.8627797869493365),
            (SyntheticFunction::Hartmann3, vec![0.3, 0.6, 0.2], -0.11278000765649607),
            (
                SyntheticFunction::Hartmann6,
                vec![0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573],
                -3.322368011391339,
            ),
            (SyntheticFunction::Hartmann6, vec![0.1, 0.9, 0.4, 0.6, 0.25, 0.5], -0.1649918212059486),
            (SyntheticFunction::Levy8, vec![0.5, -3.0, 2.0, 7.0, -9.0, 1.5, 0.0, 4.0], 43.64941840296572),
            (SyntheticFunction::Michalewicz10, vec![PI / 2.0; 10], -3.0048828125),
            (
                SyntheticFunction::Michalewicz10,
                vec![2.20, 1.57, 1.28, 1.92, 1.72, 1.57, 1.45, 1.76, 1.66, 1.57],
                -9.61905738312067,
            ),
        ];
        for (f, x, want) in cases {
            assert_abs_diff_eq!(-synthetic_eval(f, &x).unwrap(), want, epsilon = 1e-10);
        }
        assert!(synthetic_eval(SyntheticFunction::Levy8, &[1.0; 8]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        assert!(matches!(
            synthetic_eval(SyntheticFunction::Branin, &[11.0, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(synthetic_eval(SyntheticFunction::Hartmann3, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gp_task_parameters() {
        for (d, l) in [(2, 0.1), (4, 0.2), (6, 0.3), (12, 0.6)] {
            assert_eq!(gp_task_length_scale(d).unwrap(), l);
        }
        assert!(matches!(make_gp_sample_task(3, 0), Err(Error::UnsupportedDimension(3))));
        let t = make_gp_sample_task(2, 5).unwrap();
        assert_eq!(t.kernel_params().unwrap(), KernelParams::isotropic(2, 0.1, 10.0, 0.01).unwrap());
        assert_eq!(t.bounds(), &Bounds::unit(2));
    }

    #[test]
    fn gp_task_range_is_plausible() {
        for seed in 0..3 {
            let t = make_gp_sample_task(2, seed).unwrap();
            for x in sobol_grid(t.bounds(), 100_000, 1) {
                assert!(t.eval(&x).unwrap().abs() <= 9.0 * 1.5);
            }
        }
    }

    #[test]
    fn gp_tasks_are_reproducible() {
        let a = make_gp_sample_task(2, 11).unwrap();
        let b = make_gp_sample_task(2, 11).unwrap();
        let c = make_gp_sample_task(2, 12).unwrap();
        assert_eq!(a.eval(&[0.3, 0.3]).unwrap(), b.eval(&[0.3, 0.3]).unwrap());
        assert_eq!(a.true_opt(), b.true_opt());
        assert_ne!(a.eval(&[0.3, 0.3]).unwrap(), c.eval(&[0.3, 0.3]).unwrap());
    }

    #[test]
    fn branin_oracle_recovers_known_optimum() {
        let t = make_synthetic_task(SyntheticFunction::Branin).unwrap();
        assert!((-t.true_opt().f_star - 0.397887).abs() < 1e-4);
        assert!((t.eval(&t.true_opt().x_star).unwrap() - t.true_opt().f_star).abs() < 1e-12);
    }

    #[test]
    fn hartmann6_known_optimum() {
        let x = SyntheticFunction::Hartmann6.known_minimizer().unwrap();
        assert!((-synthetic_eval(SyntheticFunction::Hartmann6, &x).unwrap() + 3.32237).abs() < 1e-4);
    }

    #[test]
    fn oracle_dominates_random_probes() {
        for t in [
            make_gp_sample_task(2, 3).unwrap(),
            make_synthetic_task(SyntheticFunction::Hartmann3).unwrap(),
        ] {
            let mut rng = rng_from(4, &[]);
            for _ in 0..10_000 {
                let u: Vec<f64> = (0..t.dim()).map(|_| rng.random::<f64>()).collect();
                let x = t.bounds().from_unit(&u);
                assert!(t.eval(&x).unwrap() <= t.true_opt().f_star);
            }
        }
    }

    #[test]
    fn oracle_refinement_is_monotone() {
        let t = make_gp_sample_task(2, 8).unwrap();
        let small = estimate_true_optimum(&t, 1000, 1).unwrap();
        let large = estimate_true_optimum(&t, 20_000, 1).unwrap();
        assert!(large.f_star >= small.f_star);
        assert!(large.f_star >= t.true_opt().f_star);
        assert!(estimate_true_optimum(&t, 999, 1).is_err());
    }

    #[test]
    fn observation_noise() {
        let t = make_synthetic_task(SyntheticFunction::Branin).unwrap();
        let x = [1.0, 2.0];
        let f = t.eval(&x).unwrap();
        let ys: Vec<f64> = (0..100_000).map(|s| observe(&t, &x, s).unwrap()).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        assert!((var - 0.01).abs() < 0.05 * 0.01);
        assert!((mean - f).abs() < 1e-3);
        assert_ne!(observe(&t, &x, 1).unwrap(), observe(&t, &x, 2).unwrap());
        assert_eq!(observe(&t, &x, 1).unwrap(), observe(&t, &x, 1).unwrap());
        let quiet = t.with_noise_variance(0.0).unwrap();
        assert_eq!(observe(&quiet, &x, 1).unwrap(), f);
    }

    #[test]
    fn regret_examples() {
        let t = make_synthetic_task(SyntheticFunction::Branin).unwrap();
        let opt = t.true_opt().clone();
        let (simple, inference) = regrets(opt.f_star, opt.f_star, opt.f_star);
        assert!(simple.abs() <= 1e-6 && inference.abs() <= 1e-6);
        let elsewhere = t.eval(&[0.0, 0.0]).unwrap();
        let (simple, inference) = regrets(opt.f_star, elsewhere, t.eval(&opt.x_star).unwrap());
        assert!(simple > 0.0 && inference.abs() < 1e-12);
    }

    #[test]
    fn spec_round_trip() {
        let spec = TaskSpec::GpSample {
            dim: 2,
            seed: 3,
            noise_variance: Some(4.0),
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: TaskSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let t = back.build().unwrap();
        assert_eq!(t.noise_variance(), 4.0);
        assert_eq!(t.spec(), &spec);
        let s: TaskSpec = serde_json::from_str(r#"{"kind":"synthetic","function":"hartmann3"}"#).unwrap();
        assert_eq!(s.build().unwrap().dim(), 3);
        assert_eq!("Branin".parse::<SyntheticFunction>().unwrap(), SyntheticFunction::Branin);
    }
}
