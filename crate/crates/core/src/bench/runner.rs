//! The Bayesian optimization loop and its bookkeeping.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objectives::{make_gp_objective, ComplexityLevel, Objective, SyntheticKind, SyntheticObjective};
use super::sobol::sobol_baseline;
use crate::acquisition::{
    build_round, local_thompson_select_with, select_batch, select_incumbent, select_query, uniform_point,
    AcquisitionConfig,
};
use crate::descent::descend;
use crate::error::{LesError, Result};
use crate::gp::{map_fit, MapFitOptions};
use crate::gp::{BoxDomain, Dataset, GpHyperparams, GpModel};
use crate::pathwise::DEFAULT_NUM_FEATURES;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stopping::{local_regret_samples, stop_decision, Certificate, StoppingConfig, StoppingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Les,
    Qles,
    LocalTs,
    Sobol,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Les => "les",
            Self::Qles => "qles",
            Self::LocalTs => "local_ts",
            Self::Sobol => "sobol",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Hyperparameters fixed to the objective's true values.
    WithinModel,
    /// Hyperparameters re-estimated by MAP before every acquisition.
    OutOfModel,
}

/// What to optimize. GP-sample tasks draw a fresh function per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    GpSample {
        level: ComplexityLevel,
        dim: usize,
        #[serde(default = "default_features")]
        num_features: usize,
    },
    Sphere {
        dim: usize,
    },
    Ackley {
        dim: usize,
    },
}

fn default_features() -> usize {
    DEFAULT_NUM_FEATURES
}

impl Task {
    pub fn dim(&self) -> usize {
        match *self {
            Task::GpSample { dim, .. } | Task::Sphere { dim } | Task::Ackley { dim } => dim,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Task::GpSample { level, dim, .. } => format!("gp_{}_d{dim}", level.name()),
            Task::Sphere { dim } => format!("sphere_d{dim}"),
            Task::Ackley { dim } => format!("ackley_d{dim}"),
        }
    }

    /// The objective seen by run `seed`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Objective>> {
        Ok(match *self {
            Task::GpSample {
                level,
                dim,
                num_features,
            } => Box::new(make_gp_objective(
                level,
                dim,
                num_features,
                derive_seed(seed, OBJECTIVE_TAG),
            )?),
            Task::Sphere { dim } => Box::new(SyntheticObjective::new(SyntheticKind::Sphere, dim)?),
            Task::Ackley { dim } => Box::new(SyntheticObjective::new(SyntheticKind::Ackley, dim)?),
        })
    }
}

const OBJECTIVE_TAG: u64 = 0x0b1e;
const NOISE_TAG: u64 = 10;
const DESIGN_TAG: u64 = 11;
const SOBOL_TAG: u64 = 12;
const ROUND_TAG: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub algorithm: Algorithm,
    pub protocol: Protocol,
    pub budget: usize,
    /// Uniform random evaluations before the first acquisition.
    pub initial_design: usize,
    pub acquisition: AcquisitionConfig,
    /// Points per qLES acquisition.
    pub batch_size: usize,
    pub stopping: Option<StoppingConfig>,
    pub map: MapFitOptions,
    /// Keep every round's candidate set in the stream.
    pub trace_candidates: bool,
}

impl RunSettings {
    pub fn new(algorithm: Algorithm, protocol: Protocol, budget: usize) -> Self {
        Self {
            algorithm,
            protocol,
            budget,
            initial_design: 2,
            acquisition: AcquisitionConfig::default(),
            batch_size: 1,
            stopping: None,
            map: MapFitOptions::default(),
            trace_candidates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.budget < self.initial_design {
            return Err(LesError::Argument(format!(
                "budget {} must be positive and cover the {} initial points",
                self.budget, self.initial_design
            )));
        }
        if self.initial_design == 0 && self.algorithm != Algorithm::Sobol {
            return Err(LesError::Argument(
                "model-based runs need at least one initial point".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(LesError::Argument("batch size must be positive".into()));
        }
        if let Some(s) = &self.stopping {
            if !matches!(self.algorithm, Algorithm::Les | Algorithm::Qles) {
                return Err(LesError::Argument(format!(
                    "the stopping rule needs sample-path rounds, which {} does not build",
                    self.algorithm.name()
                )));
            }
            if s.num_paths != self.acquisition.num_paths {
                return Err(LesError::Argument(format!(
                    "stopping rule expects {} paths, acquisition draws {}",
                    s.num_paths, self.acquisition.num_paths
                )));
            }
            if self.algorithm == Algorithm::Qles && s.decision_period % self.batch_size != 0 {
                return Err(LesError::Argument(
                    "decision period must be a multiple of the batch size".into(),
                ));
            }
        }
        self.acquisition.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Number of evaluations so far, including this one.
    pub iteration: usize,
    /// Query in the objective's own coordinates.
    pub x: Vec<f64>,
    pub y: f64,
    pub best_y: f64,
    pub true_y: Option<f64>,
    pub cum_y: f64,
    pub acq: Option<f64>,
    pub stopped: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStream {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Why the run ended early, if it failed.
    pub failure: Option<String>,
    pub certificate: Option<Certificate>,
    /// `f(incumbent) - f(descent terminal)` on the noiseless objective when the run stopped.
    pub true_local_regret: Option<f64>,
    pub map_fits: usize,
    /// `(iteration of the query, candidates scored for it)` when traced.
    pub candidate_sets: Vec<(usize, Vec<Vec<f64>>)>,
}

impl RunStream {
    pub fn stopped_at(&self) -> Option<usize> {
        self.certificate.as_ref().map(|c| c.iteration)
    }

    pub fn best_true_value(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.true_y).reduce(f64::min)
    }

    pub fn final_best(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_y)
    }
}

struct Fitted {
    model: GpModel,
    /// Observation scale the model works in.
    y_scale: f64,
}

fn fit_model(data: &Dataset, obj: &dyn Objective, settings: &RunSettings, map_fits: &mut usize) -> Result<Fitted> {
    let spec = obj.model_spec();
    let (ds, y_scale) = if spec.standardize {
        let y = data.observations();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        (data.with_observations(y.iter().map(|v| (v - mean) / sd).collect())?, sd)
    } else {
        (data.clone(), 1.0)
    };
    let hp: GpHyperparams = match settings.protocol {
        Protocol::WithinModel => spec
            .known
            .ok_or_else(|| LesError::Argument(format!("{} has no known hyperparameters", obj.name())))?,
        Protocol::OutOfModel => {
            *map_fits += 1;
            map_fit(&ds, &spec.prior, &spec.init, spec.init.noise_var, &settings.map)?.hyperparams
        }
    };
    Ok(Fitted {
        model: GpModel::fit(ds, hp)?,
        y_scale,
    })
}

enum Step {
    Query(Vec<(Vec<f64>, Option<f64>)>),
    Stop,
}

/// Runs one seed of `settings` on `obj`.
pub fn run_seed(obj: &dyn Objective, settings: &RunSettings, seed: u64) -> RunStream {
    let mut stream = RunStream {
        seed,
        ..RunStream::default()
    };
    if let Err(e) = run_into(obj, settings, seed, &mut stream) {
        log::warn!("seed {seed} on {} aborted: {e}", obj.name());
        stream.failure = Some(e.to_string());
    }
    stream
}

fn run_into(obj: &dyn Objective, settings: &RunSettings, seed: u64, stream: &mut RunStream) -> Result<()> {
    settings.validate()?;
    let d = obj.dim();
    let unit = BoxDomain::unit(d);
    let mut noise_rng = rng_from_seed(derive_seed(seed, NOISE_TAG));
    let mut design_rng = rng_from_seed(derive_seed(seed, DESIGN_TAG));
    let sobol = match settings.algorithm {
        Algorithm::Sobol => sobol_baseline(&unit, settings.budget, derive_seed(seed, SOBOL_TAG))?,
        _ => Vec::new(),
    };
    if settings.protocol == Protocol::WithinModel
        && settings.algorithm != Algorithm::Sobol
        && obj.model_spec().known.is_none()
    {
        return Err(LesError::Argument(format!(
            "{} has no known hyperparameters",
            obj.name()
        )));
    }
    let mut data = Dataset::new(unit.clone());
    let mut state = StoppingState::default();
    let (mut best, mut cum) = (f64::INFINITY, 0.0);

    while data.len() < settings.budget {
        let start = Instant::now();
        let n = data.len();
        let step = if settings.algorithm == Algorithm::Sobol {
            Step::Query(vec![(sobol[n].clone(), None)])
        } else if n < settings.initial_design {
            Step::Query(vec![(uniform_point(&unit, &mut design_rng), None)])
        } else {
            acquire(obj, settings, seed, &data, &mut state, stream, false)?
        };
        let queries = match step {
            Step::Stop => {
                if let Some(last) = stream.records.last_mut() {
                    last.stopped = true;
                }
                stream.certificate = state.certificate.clone();
                break;
            }
            Step::Query(q) => q,
        };
        let share = start.elapsed().as_secs_f64() * 1e3 / queries.len() as f64;
        for (u, acq) in queries.into_iter().take(settings.budget - n) {
            let t = Instant::now();
            let y = obj.evaluate(&u, &mut noise_rng)?;
            if !y.is_finite() {
                return Err(LesError::Objective(format!("non-finite observation at {u:?}")));
            }
            best = best.min(y);
            cum += y;
            data.push(u.clone(), y)?;
            stream.records.push(RunRecord {
                seed,
                iteration: data.len(),
                x: obj.to_native(&u),
                y,
                best_y: best,
                true_y: obj.true_value(&u),
                cum_y: cum,
                acq,
                stopped: false,
                wall_ms: share + t.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    // a budget that ends on a decision point still gets its decision
    let n = data.len();
    if let Some(cfg) = &settings.stopping {
        if n == settings.budget && cfg.is_decision_point(n) && !state.stopped {
            if let Step::Stop = acquire(obj, settings, seed, &data, &mut state, stream, true)? {
                if let Some(last) = stream.records.last_mut() {
                    last.stopped = true;
                }
                stream.certificate = state.certificate.clone();
            }
        }
    }
    Ok(())
}

/// With `decide_only`, returns after the stopping decision without picking a query.
fn acquire(
    obj: &dyn Objective,
    settings: &RunSettings,
    seed: u64,
    data: &Dataset,
    state: &mut StoppingState,
    stream: &mut RunStream,
    decide_only: bool,
) -> Result<Step> {
    let n = data.len();
    let fitted = fit_model(data, obj, settings, &mut stream.map_fits)?;
    let model = &fitted.model;
    let incumbent = select_incumbent(model)?;
    let round_seed = derive_seed(derive_seed(seed, ROUND_TAG), n as u64);
    let acq = &settings.acquisition;
    if settings.algorithm == Algorithm::LocalTs {
        let x = local_thompson_select_with(
            model,
            &incumbent,
            &acq.optimizer,
            model.domain(),
            acq.num_features,
            round_seed,
        )?;
        return Ok(Step::Query(vec![(x, None)]));
    }

    let round = build_round(model, &incumbent, acq, round_seed)?;
    if let Some(cfg) = &settings.stopping {
        let regrets: Vec<f64> = local_regret_samples(&round, &incumbent)?
            .into_iter()
            .map(|r| r * fitted.y_scale)
            .collect();
        *state = stop_decision(&regrets, cfg, state, n)?;
        if state.stopped {
            if let Some(f) = obj.smooth() {
                let seq = descend(f, &incumbent, &acq.optimizer, model.domain())?;
                stream.true_local_regret = Some(f.value(&incumbent) - seq.terminal_value());
            }
            log::info!("seed {seed} stopped after {n} evaluations");
            return Ok(Step::Stop);
        }
    }
    if decide_only {
        return Ok(Step::Query(Vec::new()));
    }
    if settings.trace_candidates {
        stream.candidate_sets.push((n + 1, round.candidates().to_vec()));
    }
    let picks = match settings.algorithm {
        Algorithm::Qles => {
            let q = settings.batch_size.min(settings.budget - n);
            let (batch, score) = select_batch(&round, q)?;
            batch.into_iter().map(|x| (x, Some(score))).collect()
        }
        _ => {
            let (x, score) = select_query(&round)?;
            vec![(x, Some(score))]
        }
    };
    Ok(Step::Query(picks))
}

/// Runs every seed, in parallel, on the task's objective for that seed.
pub fn run_experiment(task: &Task, settings: &RunSettings, seeds: &[u64]) -> Vec<RunStream> {
    seeds
        .par_iter()
        .map(|&seed| match task.build(seed) {
            Ok(obj) => run_seed(obj.as_ref(), settings, seed),
            Err(e) => RunStream {
                seed,
                failure: Some(e.to_string()),
                ..RunStream::default()
            },
        })
        .collect()
}
