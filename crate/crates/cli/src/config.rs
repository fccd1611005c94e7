//! Experiment description in TOML.
//!
//! Only `budget`, `seeds`, `[task]` and `[algorithm].name` are required;
//! everything else falls back to the LES defaults. See `configs/example.toml`.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::Deserialize;

use les_core::acquisition::AcquisitionConfig;
use les_core::bench::sobol::MAX_SOBOL_DIM;
use les_core::bench::{Algorithm, ComplexityLevel, Protocol, RunSettings, Task};
use les_core::descent::{OptimizerConfig, OptimizerKind};
use les_core::stopping::StoppingConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    budget: usize,
    seeds: Vec<u64>,
    protocol: Option<Protocol>,
    output_dir: Option<PathBuf>,
    task: RawTask,
    algorithm: RawAlgorithm,
    #[serde(default)]
    stopping: RawStopping,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskKind {
    GpSample,
    Sphere,
    Ackley,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    kind: TaskKind,
    dim: usize,
    level: Option<ComplexityLevel>,
    num_features: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Names {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    name: Names,
    num_paths: Option<usize>,
    support_points: Option<usize>,
    num_features: Option<usize>,
    batch_size: Option<usize>,
    initial_design: Option<usize>,
    dedup_radius: Option<f64>,
    #[serde(default)]
    optimizer: RawOptimizer,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    kind: Option<OptimizerKind>,
    steps: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps_hat: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStopping {
    #[serde(default)]
    enabled: bool,
    epsilon: Option<f64>,
    delta: Option<f64>,
    delta_est: Option<f64>,
    decision_period: Option<usize>,
    horizon: Option<usize>,
}

/// Stopping-rule parameters as written in the config. The rule itself is
/// only attached to LES and qLES runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSettings {
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_est: f64,
    pub decision_period: usize,
    pub horizon: usize,
}

impl Default for StoppingSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            epsilon: 0.1,
            delta: 0.05,
            delta_est: 0.0025,
            decision_period: 25,
            horizon: 100,
        }
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub algorithms: Vec<Algorithm>,
    pub protocol: Protocol,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub initial_design: usize,
    pub acquisition: AcquisitionConfig,
    pub batch_size: usize,
    pub stopping: StoppingSettings,
    pub output_dir: PathBuf,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn parse_algorithm(name: &str) -> Result<Algorithm> {
    Ok(match name {
        "les" => Algorithm::Les,
        "qles" => Algorithm::Qles,
        "local_ts" => Algorithm::LocalTs,
        "sobol" => Algorithm::Sobol,
        _ => {
            return Err(invalid(
                "algorithm.name",
                format!("unknown algorithm `{name}`, expected one of les, qles, local_ts, sobol"),
            ))
        }
    })
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;

    if raw.budget < 2 {
        return Err(invalid("budget", format!("must be at least 2, got {}", raw.budget)));
    }
    if raw.seeds.is_empty() {
        return Err(invalid("seeds", "need at least one seed"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = raw.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(invalid("seeds", format!("seed {dup} is listed twice")));
    }

    let t = &raw.task;
    if t.dim == 0 {
        return Err(invalid("task.dim", "must be positive"));
    }
    let task = match t.kind {
        TaskKind::GpSample => {
            let level = t
                .level
                .ok_or_else(|| invalid("task.level", "required for gp_sample tasks"))?;
            let num_features = t.num_features.unwrap_or(AcquisitionConfig::default().num_features);
            if num_features == 0 {
                return Err(invalid("task.num_features", "must be positive"));
            }
            Task::GpSample {
                level,
                dim: t.dim,
                num_features,
            }
        }
        kind => {
            if t.level.is_some() {
                return Err(invalid("task.level", "only gp_sample tasks have a complexity level"));
            }
            if t.num_features.is_some() {
                return Err(invalid(
                    "task.num_features",
                    "only gp_sample tasks have random features",
                ));
            }
            match kind {
                TaskKind::Sphere => Task::Sphere { dim: t.dim },
                _ => Task::Ackley { dim: t.dim },
            }
        }
    };

    // known hyperparameters only exist for GP samples
    let protocol = match (raw.protocol, t.kind) {
        (Some(Protocol::WithinModel), TaskKind::Sphere | TaskKind::Ackley) => {
            return Err(invalid(
                "protocol",
                "within_model needs the objective's true hyperparameters, which only gp_sample tasks have",
            ))
        }
        (Some(p), _) => p,
        (None, TaskKind::GpSample) => Protocol::WithinModel,
        (None, _) => Protocol::OutOfModel,
    };

    let a = &raw.algorithm;
    let names = match &a.name {
        Names::One(n) => vec![n.clone()],
        Names::Many(v) => v.clone(),
    };
    if names.is_empty() {
        return Err(invalid("algorithm.name", "need at least one algorithm"));
    }
    let mut algorithms = Vec::with_capacity(names.len());
    for n in &names {
        let algo = parse_algorithm(n)?;
        if algorithms.contains(&algo) {
            return Err(invalid("algorithm.name", format!("`{n}` is listed twice")));
        }
        algorithms.push(algo);
    }
    if algorithms.contains(&Algorithm::Sobol) && task.dim() > MAX_SOBOL_DIM {
        return Err(invalid(
            "task.dim",
            format!("the Sobol baseline supports at most {MAX_SOBOL_DIM} dimensions"),
        ));
    }

    let o = &a.optimizer;
    let kind = o.kind.unwrap_or(OptimizerKind::Adam);
    let base = match kind {
        OptimizerKind::Adam => OptimizerConfig::adam(),
        OptimizerKind::GradientDescent => OptimizerConfig::gradient_descent(),
    };
    let optimizer = OptimizerConfig {
        kind,
        steps: o.steps.unwrap_or(base.steps),
        learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
        beta1: o.beta1.unwrap_or(base.beta1),
        beta2: o.beta2.unwrap_or(base.beta2),
        eps_hat: o.eps_hat.unwrap_or(base.eps_hat),
    };
    optimizer.validate().map_err(|e| invalid("algorithm.optimizer", e))?;

    let defaults = AcquisitionConfig::default();
    let acquisition = AcquisitionConfig {
        num_paths: a.num_paths.unwrap_or(defaults.num_paths),
        support_points: a.support_points.unwrap_or(defaults.support_points),
        num_features: a.num_features.unwrap_or(defaults.num_features),
        optimizer,
        dedup_radius: a.dedup_radius,
    };
    acquisition.validate().map_err(|e| invalid("algorithm", e))?;

    let s = &raw.stopping;
    let d = StoppingSettings::default();
    let stopping = StoppingSettings {
        enabled: s.enabled,
        epsilon: s.epsilon.unwrap_or(d.epsilon),
        delta: s.delta.unwrap_or(d.delta),
        delta_est: s.delta_est.unwrap_or(d.delta_est),
        decision_period: s.decision_period.unwrap_or(d.decision_period),
        horizon: s.horizon.unwrap_or(d.horizon),
    };

    let cfg = ExperimentConfig {
        task,
        algorithms,
        protocol,
        budget: raw.budget,
        seeds: raw.seeds,
        initial_design: a.initial_design.unwrap_or(2),
        acquisition,
        batch_size: a.batch_size.unwrap_or(1),
        stopping,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("results")),
    };
    if cfg.stopping.enabled && !cfg.algorithms.iter().any(|a| cfg.has_stopping(*a)) {
        return Err(invalid("stopping.enabled", "only les and qles runs can stop early"));
    }
    if cfg.batch_size > 1 && !cfg.algorithms.contains(&Algorithm::Qles) {
        return Err(invalid("algorithm.batch_size", "only qles acquires batches"));
    }
    for algo in &cfg.algorithms {
        cfg.settings_for(*algo)?;
    }
    Ok(cfg)
}

impl ExperimentConfig {
    fn has_stopping(&self, algo: Algorithm) -> bool {
        self.stopping.enabled && matches!(algo, Algorithm::Les | Algorithm::Qles)
    }

    /// The rule as the core loop sees it, for the configured path count.
    pub fn stopping_config(&self) -> Result<StoppingConfig> {
        let s = &self.stopping;
        StoppingConfig::new(
            s.epsilon,
            s.delta,
            s.delta_est,
            s.decision_period,
            s.horizon,
            self.acquisition.num_paths,
        )
        .map_err(|e| invalid("stopping", e))
    }

    /// Loop settings for one algorithm of the experiment.
    pub fn settings_for(&self, algo: Algorithm) -> Result<RunSettings> {
        let mut s = RunSettings::new(algo, self.protocol, self.budget);
        s.initial_design = self.initial_design;
        s.acquisition = self.acquisition.clone();
        s.batch_size = if algo == Algorithm::Qles { self.batch_size } else { 1 };
        if self.has_stopping(algo) {
            s.stopping = Some(self.stopping_config()?);
        }
        s.validate().map_err(|e| invalid(algo.name(), e))?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        budget = 20
        seeds = [3]
        [task]
        kind = "gp_sample"
        dim = 2
        level = "medium"
        [algorithm]
        name = "les"
    "#;

    fn err(text: &str) -> String {
        match parse_config(text) {
            Err(CliError::Config(msg)) => msg,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.algorithms, vec![Algorithm::Les]);
        assert_eq!(c.protocol, Protocol::WithinModel);
        assert_eq!(c.acquisition.num_paths, 250);
        assert_eq!(c.acquisition.support_points, 8);
        assert_eq!(c.acquisition.num_features, 1024);
        assert_eq!(c.acquisition.optimizer, OptimizerConfig::adam());
        assert_eq!(c.acquisition.optimizer.learning_rate, 0.002);
        assert_eq!(c.acquisition.optimizer.steps, 500);
        assert_eq!(c.initial_design, 2);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.stopping, StoppingSettings::default());
        assert_eq!((c.stopping.epsilon, c.stopping.delta), (0.1, 0.05));
        assert_eq!((c.stopping.delta_est, c.stopping.decision_period), (0.0025, 25));
        assert_eq!(c.output_dir, PathBuf::from("results"));
        assert_eq!(c.stopping_config().unwrap().k_max, 248);
    }

    #[test]
    fn gradient_descent_gets_its_own_rate() {
        let c = parse_config(&format!(
            "{MINIMAL}\n[algorithm.optimizer]\nkind = \"gradient_descent\"\n"
        ))
        .unwrap();
        assert_eq!(c.acquisition.optimizer, OptimizerConfig::gradient_descent());
        let c = parse_config(&format!(
            "{MINIMAL}\n[algorithm.optimizer]\nkind = \"gd\"\nlearning_rate = 0.5\n"
        ))
        .unwrap();
        assert_eq!(c.acquisition.optimizer.learning_rate, 0.5);
    }

    #[test]
    fn rejects_small_budget_and_bad_seeds() {
        assert!(err(&MINIMAL.replace("budget = 20", "budget = 1")).starts_with("budget"));
        assert!(err(&MINIMAL.replace("[3]", "[3, 4, 3]")).starts_with("seeds"));
        assert!(err(&MINIMAL.replace("[3]", "[]")).starts_with("seeds"));
    }

    #[test]
    fn errors_name_the_field() {
        assert!(err(&MINIMAL.replace("\"les\"", "\"lse\"")).contains("algorithm.name"));
        assert!(err(&MINIMAL.replace("\"les\"", "[\"les\", \"les\"]")).contains("algorithm.name"));
        assert!(err(&MINIMAL.replace("\"medium\"", "\"mild\"")).contains("level"));
        assert!(err(&MINIMAL.replace("dim = 2", "dim = 2\ncolour = 1")).contains("colour"));
        assert!(err(&MINIMAL.replace("dim = 2", "dim = 0")).starts_with("task.dim"));
        assert!(err(&MINIMAL.replace("level = \"medium\"", "")).starts_with("task.level"));
        assert!(err(&MINIMAL.replace("budget = 20", "budget = 20\nprotocol = \"in_model\"")).contains("protocol"));
        assert!(err(&MINIMAL.replace("budget = 20\n", "")).contains("budget"));
    }

    #[test]
    fn synthetic_tasks_default_to_map() {
        let text = MINIMAL
            .replace("\"gp_sample\"", "\"sphere\"")
            .replace("level = \"medium\"", "");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.task, Task::Sphere { dim: 2 });
        assert_eq!(c.protocol, Protocol::OutOfModel);
        let within = text.replace("budget = 20", "budget = 20\nprotocol = \"within_model\"");
        assert!(err(&within).starts_with("protocol"));
        assert!(err(&format!("{text}\n").replace("dim = 2", "dim = 2\nlevel = \"low\"")).starts_with("task.level"));
    }

    #[test]
    fn inconsistent_stopping_is_rejected() {
        let few_paths = MINIMAL.replace("name = \"les\"", "name = \"les\"\nnum_paths = 50");
        assert!(parse_config(&few_paths).is_ok());
        assert!(err(&format!("{few_paths}\n[stopping]\nenabled = true\n")).starts_with("stopping"));
        let sobol_only = MINIMAL.replace("\"les\"", "\"sobol\"");
        assert!(err(&format!("{sobol_only}\n[stopping]\nenabled = true\n")).starts_with("stopping.enabled"));
        let mixed = MINIMAL.replace("\"les\"", "[\"les\", \"sobol\"]");
        let c = parse_config(&format!("{mixed}\n[stopping]\nenabled = true\nepsilon = 0.2\n")).unwrap();
        assert!(c.settings_for(Algorithm::Les).unwrap().stopping.is_some());
        assert!(c.settings_for(Algorithm::Sobol).unwrap().stopping.is_none());
        let q = MINIMAL.replace("\"les\"", "\"qles\"\nbatch_size = 4");
        assert!(err(&format!("{q}\n[stopping]\nenabled = true\n")).starts_with("qles"));
        assert!(parse_config(&format!("{q}\n[stopping]\nenabled = true\ndecision_period = 24\n")).is_ok());
    }

    #[test]
    fn rejects_oversized_sobol() {
        let text = MINIMAL.replace("\"les\"", "\"sobol\"").replace("dim = 2", "dim = 65");
        assert!(err(&text).starts_with("task.dim"));
        assert!(parse_config(&MINIMAL.replace("dim = 2", "dim = 65")).is_ok());
    }

    #[test]
    fn example_config_parses() {
        let text = include_str!("../../../configs/example.toml");
        let c = parse_config(text).unwrap();
        assert_eq!(c.algorithms.len(), 2);
    }
}
