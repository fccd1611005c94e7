//! Monte-Carlo stopping rule.
//!
//! Every `T_dec` iterations the local regrets `r_l = f_l(incumbent) - f_l(x*_l)`
//! of the current round's sample paths are compared with `epsilon`. The run
//! stops once at least `k_max` of the `L` regrets pass, where `k_max` is the
//! smallest count whose one-sided Clopper-Pearson lower bound on the pass
//! probability exceeds `1 - delta_mod` at confidence `1 - delta_test`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::acquisition::AcquisitionRound;
use crate::error::{check_dim, LesError, Result};
use crate::pathwise::{SamplePath, SmoothFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub delta_mod: f64,
    pub delta_est: f64,
    pub decision_period: usize,
    /// Iteration budget across which `delta_est` is spread.
    pub horizon: usize,
    pub num_paths: usize,
    pub k_max: usize,
}

impl StoppingConfig {
    /// Builds the rule with `delta_mod = delta - delta_est` and computes
    /// `k_max`. Fails when no count out of `num_paths` is enough.
    pub fn new(
        epsilon: f64,
        delta: f64,
        delta_est: f64,
        decision_period: usize,
        horizon: usize,
        num_paths: usize,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LesError::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) || !(delta_est > 0.0 && delta_est < delta) {
            return Err(LesError::Argument(format!(
                "need 0 < delta_est < delta < 1, got delta = {delta}, delta_est = {delta_est}"
            )));
        }
        if decision_period == 0 || horizon == 0 || num_paths == 0 {
            return Err(LesError::Argument(
                "decision period, horizon and path count must be positive".into(),
            ));
        }
        let delta_mod = delta - delta_est;
        let delta_test = delta_est * decision_period.min(horizon) as f64 / horizon as f64;
        let k_max = kmax_threshold(num_paths, delta_mod, delta_test).ok_or_else(|| {
            LesError::Argument(format!(
                "no pass count out of {num_paths} paths certifies delta_mod = {delta_mod} at test level {delta_test}"
            ))
        })?;
        Ok(Self {
            epsilon,
            delta,
            delta_mod,
            delta_est,
            decision_period,
            horizon,
            num_paths,
            k_max,
        })
    }

    /// `delta = 0.05`, `delta_est = 0.0025`, a decision every 25 iterations
    /// and a horizon of 100.
    pub fn with_defaults(epsilon: f64, num_paths: usize) -> Result<Self> {
        Self::new(epsilon, 0.05, 0.0025, 25, 100, num_paths)
    }

    /// Per-decision test level.
    pub fn delta_test(&self) -> f64 {
        self.delta_est * self.decision_period.min(self.horizon) as f64 / self.horizon as f64
    }

    pub fn is_decision_point(&self, iteration: usize) -> bool {
        iteration > 0 && iteration % self.decision_period == 0
    }
}

/// Lower end of the one-sided Clopper-Pearson interval for `k` successes
/// out of `n` at level `1 - alpha`.
pub fn clopper_pearson_lower(k: usize, n: usize, alpha: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    Beta::new(k as f64, (n - k + 1) as f64)
        .expect("shape parameters are positive")
        .inverse_cdf(alpha)
}

/// Smallest `k <= n` whose lower bound exceeds `1 - delta_mod`.
pub fn kmax_threshold(n: usize, delta_mod: f64, delta_test: f64) -> Option<usize> {
    (1..=n).find(|&k| clopper_pearson_lower(k, n, delta_test) > 1.0 - delta_mod)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub iteration: usize,
    pub passes: usize,
    pub num_paths: usize,
    pub k_max: usize,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoppingState {
    pub iteration: usize,
    pub last_decision_iteration: Option<usize>,
    pub stopped: bool,
    pub certificate: Option<Certificate>,
}

/// `f(incumbent) - f(terminal)` on one path.
pub fn path_regret(path: &SamplePath, incumbent: &[f64], terminal: &[f64]) -> f64 {
    path.value(incumbent) - path.value(terminal)
}

/// Local regret of the incumbent on every path of the round.
pub fn local_regret_samples(round: &AcquisitionRound, incumbent: &[f64]) -> Result<Vec<f64>> {
    check_dim(round.model().dim(), incumbent.len(), "incumbent")?;
    if round.paths().is_empty() {
        return Err(LesError::Argument("round carries no sample paths".into()));
    }
    Ok(round
        .paths()
        .iter()
        .zip(round.sequences())
        .map(|(p, s)| path_regret(p, incumbent, s.terminal()))
        .collect())
}

/// Advances `state` to `iteration`, taking a decision there if it is due.
pub fn stop_decision(
    regrets: &[f64],
    cfg: &StoppingConfig,
    state: &StoppingState,
    iteration: usize,
) -> Result<StoppingState> {
    if regrets.len() != cfg.num_paths {
        return Err(LesError::Argument(format!(
            "expected {} regrets, got {}",
            cfg.num_paths,
            regrets.len()
        )));
    }
    let mut next = state.clone();
    next.iteration = iteration;
    if state.stopped || !cfg.is_decision_point(iteration) {
        return Ok(next);
    }
    next.last_decision_iteration = Some(iteration);
    let passes = regrets.iter().filter(|r| **r <= cfg.epsilon).count();
    log::debug!(
        "stopping check at {iteration}: {passes}/{} pass, need {}",
        cfg.num_paths,
        cfg.k_max
    );
    if passes >= cfg.k_max {
        next.stopped = true;
        next.certificate = Some(Certificate {
            iteration,
            passes,
            num_paths: cfg.num_paths,
            k_max: cfg.k_max,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
        });
    }
    Ok(next)
}
