//! The Bayesian optimization loop: initial design, hyperparameter refresh,
//! γ-exploit branching, acquisition-driven queries and recommendation.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::{build_conditioned_ensemble, ei_from_moments, mes_from_moments, ConditionedEnsemble};
use crate::benchmarks::{observe, regrets, Task};
use crate::gp::{GpPosterior, Observation};
use crate::hyper::{fit_hyperparameters, HyperFit, HyperFitConfig};
use crate::rng::{derive_seed, rng_from};
use crate::sampler::{sample_opt_pairs, OptPair, SamplerConfig};
use crate::search::{default_grid_size, maximize, sobol_grid, Bounds, Maximum};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Jes,
    Mes,
    Ei,
    Random,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 4] = [Self::Jes, Self::Mes, Self::Ei, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jes => "jes",
            Self::Mes => "mes",
            Self::Ei => "ei",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown acquisition {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub acquisition: AcquisitionKind,
    /// Initial design size; `None` means `D + 1`.
    pub n_init: Option<usize>,
    pub n_iters: usize,
    /// Opt-pairs per iteration (L), split evenly across hyperparameter sets.
    pub n_mc_samples: usize,
    /// Probability of querying the posterior-mean maximizer instead.
    pub gamma: f64,
    pub hyper: HyperFitConfig,
    /// Refit hyperparameters every this many iterations.
    pub hyper_refresh_every: usize,
    pub sampler: SamplerConfig,
    /// `None` means `max(2000, 500·D)`.
    pub acq_grid_size: Option<usize>,
    pub acq_refine_iters: usize,
    pub rec_grid_size: Option<usize>,
    pub rec_refine_iters: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            acquisition: AcquisitionKind::Jes,
            n_init: None,
            n_iters: 50,
            n_mc_samples: 100,
            gamma: 0.0,
            hyper: HyperFitConfig::default(),
            hyper_refresh_every: 1,
            sampler: SamplerConfig::default(),
            acq_grid_size: None,
            acq_refine_iters: 4,
            rec_grid_size: None,
            rec_refine_iters: 4,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} is outside [0, 1]", self.gamma)));
        }
        if self.n_init == Some(0) {
            return Err(Error::InvalidArgument("the initial design needs at least one point".into()));
        }
        if self.n_mc_samples == 0 {
            return Err(Error::InvalidArgument("at least one MC sample is required".into()));
        }
        if self.hyper_refresh_every == 0 {
            return Err(Error::InvalidArgument("hyper_refresh_every must be positive".into()));
        }
        Ok(())
    }

    pub fn n_init_for(&self, dim: usize) -> usize {
        self.n_init.unwrap_or(dim + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Init,
    Exploit,
    Acquire,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::Exploit => "exploit",
            Self::Acquire => "acquire",
        }
    }
}

/// `Exploit` iff `draw < gamma`.
pub fn gamma_branch(draw: f64, gamma: f64) -> Branch {
    if draw < gamma {
        Branch::Exploit
    } else {
        Branch::Acquire
    }
}

/// Seeds used by iteration `t` of a run with base seed `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterationSeeds {
    pub hyper: u64,
    pub branch: u64,
    pub sampler: u64,
    pub acquisition: u64,
    pub random_query: u64,
    pub noise: u64,
}

const TAG_HYPER: u64 = 1;
const TAG_BRANCH: u64 = 2;
const TAG_SAMPLER: u64 = 3;
const TAG_ACQ: u64 = 4;
const TAG_RANDOM: u64 = 5;
const TAG_NOISE: u64 = 6;
const TAG_INIT: u64 = 7;
const TAG_REC: u64 = 8;

impl IterationSeeds {
    pub fn new(seed: u64, t: usize) -> Self {
        let t = t as u64;
        Self {
            hyper: derive_seed(seed, &[TAG_HYPER, t]),
            branch: derive_seed(seed, &[TAG_BRANCH, t]),
            sampler: derive_seed(seed, &[TAG_SAMPLER, t]),
            acquisition: derive_seed(seed, &[TAG_ACQ, t]),
            random_query: derive_seed(seed, &[TAG_RANDOM, t]),
            noise: derive_seed(seed, &[TAG_NOISE, t]),
        }
    }
}

/// Noise stream for initial-design point `i`.
pub fn init_noise_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[TAG_INIT, i as u64])
}

/// Grid seed for the recommendation made with `n_obs` observations.
pub fn recommendation_seed(seed: u64, n_obs: usize) -> u64 {
    derive_seed(seed, &[TAG_REC, n_obs as u64])
}

/// Initial design: the first `m` points of a scrambled Sobol sequence.
pub fn initial_design(bounds: &Bounds, m: usize, seed: u64) -> Vec<Vec<f64>> {
    sobol_grid(bounds, m, derive_seed(seed, &[TAG_INIT]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub branch: Branch,
    pub x: Vec<f64>,
    pub y: f64,
    /// Noiseless objective value at `x`.
    pub f: f64,
    pub recommendation: Vec<f64>,
    pub recommendation_value: f64,
    pub simple_regret: f64,
    pub inference_regret: f64,
    /// Acquisition time (ms): from after hyperparameter fitting up to, but
    /// excluding, the objective evaluation. Zero for init and exploit rows.
    pub acq_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub recommendation: Vec<f64>,
    /// Optimum value the regrets are measured against.
    pub f_opt: f64,
    pub warnings: Vec<String>,
}

/// Maximizer of the posterior mean over a Sobol grid plus the training
/// inputs, refined by coordinate search.
pub fn recommend(posterior: &GpPosterior, bounds: &Bounds, grid_size: usize, refine_iters: usize, seed: u64) -> Vec<f64> {
    let extra: Vec<Vec<f64>> = posterior.data().iter().map(|o| o.x.clone()).collect();
    maximize(|x| posterior.mean_unchecked(x), bounds, grid_size, &extra, refine_iters, seed).x
}

/// One posterior per hyperparameter set, in model units.
struct Model {
    posteriors: Vec<GpPosterior>,
}

impl Model {
    fn build(data: &[Observation], fit: HyperFit) -> Result<Self> {
        let scaled = fit.standardizer.apply(data);
        let posteriors = fit
            .sets
            .iter()
            .map(|p| {
                let obs: Vec<Observation> = scaled
                    .iter()
                    .map(|o| Observation::new(o.x.clone(), o.y, p.noise_variance))
                    .collect();
                GpPosterior::fit(&obs, p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { posteriors })
    }

    fn map(&self) -> &GpPosterior {
        &self.posteriors[0]
    }
}

/// Per-set acquisition state for one iteration.
enum Prepared {
    Jes(Vec<ConditionedEnsemble>),
    Mes(Vec<(GpPosterior, Vec<f64>)>),
    Ei(Vec<(GpPosterior, f64)>),
}

impl Prepared {
    fn evaluator(&self) -> Box<dyn FnMut(&[f64]) -> f64 + '_> {
        match self {
            Prepared::Jes(ensembles) => {
                let mut evals: Vec<_> = ensembles.iter().map(|e| e.evaluator()).collect();
                let k = evals.len() as f64;
                Box::new(move |x| evals.iter_mut().map(|e| e(x)).sum::<f64>() / k)
            }
            Prepared::Mes(sets) => {
                let k = sets.len() as f64;
                let mut v = Vec::new();
                Box::new(move |x| {
                    sets.iter()
                        .map(|(post, f_stars)| {
                            let (m, raw) = post.whitened_cross(x, &mut v);
                            mes_from_moments(m, post.clamp_variance(raw).sqrt(), f_stars)
                        })
                        .sum::<f64>()
                        / k
                })
            }
            Prepared::Ei(sets) => {
                let k = sets.len() as f64;
                let mut v = Vec::new();
                Box::new(move |x| {
                    sets.iter()
                        .map(|(post, inc)| {
                            let (m, raw) = post.whitened_cross(x, &mut v);
                            ei_from_moments(m, post.clamp_variance(raw).sqrt(), *inc)
                        })
                        .sum::<f64>()
                        / k
                })
            }
        }
    }
}

/// Splits `l` pairs as evenly as possible over `s` sets.
fn split_counts(l: usize, s: usize) -> Vec<usize> {
    (0..s).map(|i| l / s + usize::from(i < l % s)).filter(|&c| c > 0).collect()
}

fn sample_pairs_per_set(model: &Model, bounds: &Bounds, config: &BoConfig, seed: u64) -> Result<Vec<(usize, Vec<OptPair>)>> {
    split_counts(config.n_mc_samples, model.posteriors.len())
        .into_iter()
        .enumerate()
        .map(|(s, count)| {
            let pairs = sample_opt_pairs(&model.posteriors[s], bounds, count, &config.sampler, derive_seed(seed, &[s as u64]))?;
            Ok((s, pairs))
        })
        .collect()
}

fn prepare(kind: AcquisitionKind, model: &Model, bounds: &Bounds, config: &BoConfig, seeds: &IterationSeeds) -> Result<Option<Prepared>> {
    Ok(Some(match kind {
        AcquisitionKind::Random => return Ok(None),
        AcquisitionKind::Jes => Prepared::Jes(
            sample_pairs_per_set(model, bounds, config, seeds.sampler)?
                .into_iter()
                .map(|(s, pairs)| build_conditioned_ensemble(&model.posteriors[s], &pairs))
                .collect::<Result<_>>()?,
        ),
        AcquisitionKind::Mes => Prepared::Mes(
            sample_pairs_per_set(model, bounds, config, seeds.sampler)?
                .into_iter()
                .map(|(s, pairs)| (model.posteriors[s].clone(), pairs.iter().map(|p| p.f_star).collect()))
                .collect(),
        ),
        AcquisitionKind::Ei => Prepared::Ei(
            model
                .posteriors
                .iter()
                .map(|post| {
                    let inc = post
                        .data()
                        .iter()
                        .map(|o| post.mean_unchecked(&o.x))
                        .fold(f64::NEG_INFINITY, f64::max);
                    (post.clone(), inc)
                })
                .collect(),
        ),
    }))
}

struct Loop<'a> {
    task: &'a Task,
    config: &'a BoConfig,
    seed: u64,
    rec_grid: usize,
    data: Vec<Observation>,
    rows: Vec<TraceRow>,
    warnings: Vec<String>,
}

impl Loop<'_> {
    fn evaluate(&self, x: &[f64], noise_seed: u64, iteration: usize) -> Result<(f64, f64)> {
        let wrap = |e: Error| Error::Objective {
            iteration,
            source: Box::new(e),
        };
        let f = self.task.eval(x).map_err(wrap)?;
        let y = observe(self.task, x, noise_seed).map_err(wrap)?;
        Ok((f, y))
    }

    fn fit(&mut self, seed: u64) -> Result<HyperFit> {
        let fit = fit_hyperparameters(&self.data, self.task.bounds(), &self.config.hyper, seed)?;
        self.warnings.extend(fit.warnings.iter().cloned());
        Ok(fit)
    }

    fn recommend_with(&self, model: Option<&Model>) -> Vec<f64> {
        match model {
            Some(m) => recommend(
                m.map(),
                self.task.bounds(),
                self.rec_grid,
                self.config.rec_refine_iters,
                recommendation_seed(self.seed, self.data.len()),
            ),
            // Too little data to fit a model: best observed point.
            None => {
                let best = self.data.iter().max_by(|a, b| a.y.total_cmp(&b.y)).expect("non-empty data");
                best.x.clone()
            }
        }
    }

    fn push_row(&mut self, iteration: usize, branch: Branch, x: Vec<f64>, f: f64, y: f64, rec: Vec<f64>, acq_time_ms: f64) -> Result<()> {
        let recommendation_value = self.task.eval(&rec).map_err(|e| Error::Objective {
            iteration,
            source: Box::new(e),
        })?;
        self.rows.push(TraceRow {
            iteration,
            branch,
            x,
            y,
            f,
            recommendation: rec,
            recommendation_value,
            simple_regret: f64::NAN,
            inference_regret: f64::NAN,
            acq_time_ms,
        });
        Ok(())
    }

    /// Model on the current data with the given (cached) hyperparameters, or
    /// a fresh fit when there are none yet.
    fn model_for_rows(&mut self, cached: Option<&HyperFit>, fit_seed: u64) -> Result<Option<Model>> {
        let fixed = self.config.hyper.mode == crate::hyper::HyperMode::Fixed;
        if !fixed && self.data.len() < 2 {
            return Ok(None);
        }
        let fit = match cached {
            Some(f) => f.clone(),
            None => self.fit(fit_seed)?,
        };
        Ok(Some(Model::build(&self.data, fit)?))
    }
}

/// Runs `config.n_iters` iterations of Bayesian optimization on `task`.
///
/// Deterministic given `(task, config, seed)`.
pub fn run_bo(task: &Task, config: &BoConfig, seed: u64) -> Result<Trace> {
    config.validate()?;
    let bounds = task.bounds();
    let dim = bounds.dim();
    let mut lp = Loop {
        task,
        config,
        seed,
        rec_grid: config.rec_grid_size.unwrap_or_else(|| default_grid_size(dim)),
        data: Vec::new(),
        rows: Vec::new(),
        warnings: Vec::new(),
    };
    let acq_grid = config.acq_grid_size.unwrap_or_else(|| default_grid_size(dim));

    let m = config.n_init_for(dim);
    for (i, x) in initial_design(bounds, m, seed).into_iter().enumerate() {
        let (f, y) = lp.evaluate(&x, init_noise_seed(seed, i), i)?;
        lp.data.push(Observation::new(x.clone(), y, task.noise_variance()));
        let model = lp.model_for_rows(None, derive_seed(seed, &[TAG_INIT, TAG_HYPER, i as u64]))?;
        let rec = lp.recommend_with(model.as_ref());
        lp.push_row(i, Branch::Init, x, f, y, rec, 0.0)?;
    }

    let mut fit: Option<HyperFit> = None;
    for t in 0..config.n_iters {
        let iteration = m + t;
        let seeds = IterationSeeds::new(seed, t);
        if t % config.hyper_refresh_every == 0 || fit.is_none() {
            fit = Some(lp.fit(seeds.hyper)?);
        }
        let model = Model::build(&lp.data, fit.clone().expect("fitted above"))?;
        let draw: f64 = rng_from(seeds.branch, &[]).random();
        let branch = gamma_branch(draw, config.gamma);
        let start = Instant::now();
        let x = match branch {
            Branch::Exploit => lp.recommend_with(Some(&model)),
            _ => match prepare(config.acquisition, &model, bounds, config, &seeds)? {
                None => {
                    let mut rng = rng_from(seeds.random_query, &[]);
                    let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                    bounds.from_unit(&u)
                }
                Some(prepared) => {
                    let Maximum { x, .. } = maximize(
                        prepared.evaluator(),
                        bounds,
                        acq_grid,
                        &[],
                        config.acq_refine_iters,
                        seeds.acquisition,
                    );
                    x
                }
            },
        };
        let acq_time_ms = match branch {
            Branch::Acquire => start.elapsed().as_secs_f64() * 1e3,
            _ => 0.0,
        };
        let (f, y) = lp.evaluate(&x, seeds.noise, iteration)?;
        lp.data.push(Observation::new(x.clone(), y, task.noise_variance()));
        let model = lp.model_for_rows(fit.as_ref(), 0)?;
        let rec = lp.recommend_with(model.as_ref());
        lp.push_row(iteration, branch, x, f, y, rec, acq_time_ms)?;
    }

    // Regrets against the best value known for this task, which includes
    // anything this run found above the oracle.
    let f_opt = lp
        .rows
        .iter()
        .flat_map(|r| [r.f, r.recommendation_value])
        .fold(task.true_opt().f_star, f64::max);
    let mut best = f64::NEG_INFINITY;
    for row in &mut lp.rows {
        best = best.max(row.f);
        let (simple, inference) = regrets(f_opt, best, row.recommendation_value);
        row.simple_regret = simple;
        row.inference_regret = inference;
    }
    let recommendation = lp.rows.last().map(|r| r.recommendation.clone()).unwrap_or_default();
    Ok(Trace {
        rows: lp.rows,
        recommendation,
        f_opt,
        warnings: lp.warnings,
    })
}
