//! Log marginal likelihood and MAP hyperparameter search.
//!
//! The search runs projected gradient ascent with backtracking over
//! `theta = (ln l_1, ..., ln l_d, ln s)` where `s` is the output scale; the
//! noise variance stays fixed. Only lengthscales carry a prior; the output
//! scale is flat in log space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{gram_matrix, linalg, Dataset, GpHyperparams, LengthscalePrior};
use crate::error::{check_dim, LesError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln N(y; 0, K + noise I)`.
pub fn log_marginal_likelihood(dataset: &Dataset, hp: &GpHyperparams) -> Result<f64> {
    hp.validate()?;
    check_dim(dataset.dim(), hp.dim(), "hyperparameters")?;
    let mut k = gram_matrix(dataset.inputs(), hp);
    for i in 0..k.nrows() {
        k[(i, i)] += hp.noise_var;
    }
    let factor = linalg::factor_with_jitter(&k, hp.output_scale)?;
    let y = dataset.observations();
    let mut w = y.to_vec();
    factor.solve_lower_in_place(&mut w);
    let quad: f64 = w.iter().map(|v| v * v).sum();
    Ok(-0.5 * quad - 0.5 * factor.log_det() - 0.5 * y.len() as f64 * LN_2PI)
}

/// Regularizer on the lengthscales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HyperPrior {
    /// Shared log-normal density added to the evidence.
    LogNormal(LengthscalePrior),
    /// Flat prior restricted to `[lower, upper]`.
    Bounded { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFitOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Multipliers applied to the initial lengthscales, one restart each.
    pub restart_scales: Vec<f64>,
    /// Bounds on the output scale, keeping the search away from degenerate fits.
    pub output_scale_bounds: (f64, f64),
}

impl Default for MapFitOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-5,
            restart_scales: vec![1.0, 0.5, 2.0],
            output_scale_bounds: (1e-6, 1e6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub hyperparams: GpHyperparams,
    /// Penalized objective at `hyperparams`.
    pub objective: f64,
    /// Penalized objective at the initialization.
    pub init_objective: f64,
    /// Set when no restart improved on the initialization.
    pub warning: bool,
}

struct Objective<'a> {
    dataset: &'a Dataset,
    prior: HyperPrior,
    noise_var: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn hyperparams(&self, theta: &[f64]) -> GpHyperparams {
        let d = self.dim();
        GpHyperparams {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            output_scale: theta[d].exp(),
            noise_var: self.noise_var,
        }
    }

    fn project(&self, theta: &mut [f64]) {
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *t = t.clamp(*lo, *hi);
        }
    }

    fn prior_terms(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self.prior {
            HyperPrior::LogNormal(p) => {
                let d = self.dim();
                let s2 = p.log_std * p.log_std;
                let mut total = 0.0;
                for &t in &theta[..d] {
                    total += p.log_density(t.exp());
                }
                if let Some(g) = grad {
                    for i in 0..d {
                        g[i] += -1.0 - (theta[i] - p.log_mean) / s2;
                    }
                }
                total
            }
            HyperPrior::Bounded { .. } => 0.0,
        }
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let hp = self.hyperparams(theta);
        let lml = log_marginal_likelihood(self.dataset, &hp).ok()?;
        let v = lml + self.prior_terms(theta, None);
        v.is_finite().then_some(v)
    }

    /// Objective and gradient with respect to `theta`.
    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = self.dim();
        let hp = self.hyperparams(theta);
        let x = self.dataset.inputs();
        let n = x.len();
        let kf = gram_matrix(x, &hp);
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += hp.noise_var;
        }
        let factor = linalg::factor_with_jitter(&k, hp.output_scale).ok()?;
        let y = self.dataset.observations();
        let alpha = factor.solve(y);
        let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * quad - 0.5 * factor.log_det() - 0.5 * n as f64 * LN_2PI;

        // d lml / d theta_j = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta_j)
        let kinv = factor.inverse();
        let mut w = DMatrix::from_fn(n, n, |i, j| alpha[i] * alpha[j]);
        w -= kinv;
        let mut grad = vec![0.0; d + 1];
        let inv = hp.inv_sq_lengthscales();
        for j in 0..n {
            for i in 0..n {
                let wk = w[(i, j)] * kf[(i, j)];
                grad[d] += wk;
                if i != j {
                    for (dim, g) in grad[..d].iter_mut().enumerate() {
                        let diff = x[i][dim] - x[j][dim];
                        *g += wk * diff * diff * inv[dim];
                    }
                }
            }
        }
        grad.iter_mut().for_each(|g| *g *= 0.5);
        let value = lml + self.prior_terms(theta, Some(&mut grad));
        (value.is_finite() && grad.iter().all(|g| g.is_finite())).then_some((value, grad))
    }

    /// Gradient with components that push against an active bound removed.
    fn projected(&self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                let at_lo = theta[i] <= self.lower[i] && g < 0.0;
                let at_hi = theta[i] >= self.upper[i] && g > 0.0;
                if at_lo || at_hi {
                    0.0
                } else {
                    g
                }
            })
            .collect()
    }

    fn ascend(&self, mut theta: Vec<f64>, opts: &MapFitOptions) -> Option<(Vec<f64>, f64)> {
        self.project(&mut theta);
        let (mut value, mut grad) = self.value_grad(&theta)?;
        let mut step: f64 = 0.1;
        for _ in 0..opts.max_iters {
            let pg = self.projected(&theta, &grad);
            let norm = pg.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < opts.grad_tol {
                break;
            }
            // Cap the first trial move at one unit in log space.
            step = step.min(1.0 / norm);
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand: Vec<f64> = theta.iter().zip(&pg).map(|(t, g)| t + step * g).collect();
                self.project(&mut cand);
                let moved: f64 = cand.iter().zip(&theta).zip(&pg).map(|((c, t), g)| (c - t) * g).sum();
                if let Some((v, g)) = self.value_grad(&cand) {
                    if v >= value + 1e-4 * moved && v >= value {
                        theta = cand;
                        value = v;
                        grad = g;
                        accepted = true;
                        step *= 2.0;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Some((theta, value))
    }
}

/// MAP estimate of the lengthscales and output scale with the noise variance
/// held at `fixed_noise`.
///
/// Runs one ascent per entry of `opts.restart_scales`, each starting from the
/// initial lengthscales multiplied by that factor, and keeps the best. If none
/// improves on `init`, `init` is returned with `warning` set.
pub fn map_fit(
    dataset: &Dataset,
    prior: &HyperPrior,
    init: &GpHyperparams,
    fixed_noise: f64,
    opts: &MapFitOptions,
) -> Result<MapFit> {
    if dataset.is_empty() {
        return Err(LesError::Argument("MAP fit needs at least one observation".into()));
    }
    check_dim(dataset.dim(), init.dim(), "initial hyperparameters")?;
    let d = dataset.dim();
    let (ls_lo, ls_hi) = match *prior {
        HyperPrior::LogNormal(_) => (f64::NEG_INFINITY, f64::INFINITY),
        HyperPrior::Bounded { lower, upper } => {
            if !(lower > 0.0 && lower < upper) {
                return Err(LesError::Argument(format!(
                    "lengthscale bounds must satisfy 0 < lower < upper, got [{lower}, {upper}]"
                )));
            }
            (lower.ln(), upper.ln())
        }
    };
    let mut lower = vec![ls_lo; d];
    let mut upper = vec![ls_hi; d];
    lower.push(opts.output_scale_bounds.0.ln());
    upper.push(opts.output_scale_bounds.1.ln());
    let objective = Objective {
        dataset,
        prior: *prior,
        noise_var: fixed_noise,
        lower,
        upper,
    };

    let mut init_theta: Vec<f64> = init.lengthscales.iter().map(|l| l.ln()).collect();
    init_theta.push(init.output_scale.ln());
    let init_objective = objective.value(&init_theta).unwrap_or(f64::NEG_INFINITY);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for &scale in &opts.restart_scales {
        let mut theta = init_theta.clone();
        for t in &mut theta[..d] {
            *t += scale.ln();
        }
        if let Some((th, v)) = objective.ascend(theta, opts) {
            if best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                best = Some((th, v));
            }
        }
    }

    match best {
        Some((theta, value)) if value > init_objective => Ok(MapFit {
            hyperparams: objective.hyperparams(&theta),
            objective: value,
            init_objective,
            warning: false,
        }),
        _ => {
            log::warn!("MAP fit did not improve on the initial hyperparameters");
            let mut hp = init.clone();
            hp.noise_var = fixed_noise;
            Ok(MapFit {
                hyperparams: hp,
                objective: init_objective,
                init_objective,
                warning: true,
            })
        }
    }
}
