//! Gaussian process regression with a squared-exponential ARD kernel.
//!
//! The GP has zero prior mean. Observations carry homoscedastic Gaussian
//! noise `noise_var`; predictive variances returned here are for a noisy
//! observation `y(x)` unless stated otherwise.

pub mod linalg;
mod map;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LesError, Result};
pub use linalg::Factor;
pub use map::{log_marginal_likelihood, map_fit, HyperPrior, MapFit, MapFitOptions};

/// Axis-aligned box search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(LesError::Argument(format!(
                "box bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(LesError::Argument(format!(
                    "box dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
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

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Coordinate-wise projection onto the box.
    pub fn clip_in_place(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Maps a point of the unit cube affinely into this box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Ordered query/observation pairs inside a box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    domain: BoxDomain,
    inputs: Vec<Vec<f64>>,
    observations: Vec<f64>,
}

impl Dataset {
    pub fn new(domain: BoxDomain) -> Self {
        Self {
            domain,
            inputs: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn from_points(domain: BoxDomain, inputs: Vec<Vec<f64>>, observations: Vec<f64>) -> Result<Self> {
        if inputs.len() != observations.len() {
            return Err(LesError::Argument(format!(
                "{} inputs but {} observations",
                inputs.len(),
                observations.len()
            )));
        }
        let mut ds = Self::new(domain);
        for (x, y) in inputs.into_iter().zip(observations) {
            ds.push(x, y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        check_dim(self.domain.dim(), x.len(), "dataset input")?;
        if !self.domain.contains(&x) {
            return Err(LesError::Argument(format!("input {x:?} outside the domain")));
        }
        if !y.is_finite() {
            return Err(LesError::Argument(format!("non-finite observation {y}")));
        }
        self.inputs.push(x);
        self.observations.push(y);
        Ok(())
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// Same inputs with the observations replaced, e.g. after standardization.
    pub fn with_observations(&self, observations: Vec<f64>) -> Result<Self> {
        Self::from_points(self.domain.clone(), self.inputs.clone(), observations)
    }
}

/// SE-ARD kernel hyperparameters and the observation noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub output_scale: f64,
    pub noise_var: f64,
}

impl GpHyperparams {
    pub fn new(lengthscales: Vec<f64>, output_scale: f64, noise_var: f64) -> Result<Self> {
        let hp = Self {
            lengthscales,
            output_scale,
            noise_var,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn isotropic(dim: usize, lengthscale: f64, output_scale: f64, noise_var: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim], output_scale, noise_var)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(LesError::Argument("no lengthscales".into()));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(LesError::Argument(format!("lengthscale {l} is not positive")));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(LesError::Argument(format!(
                "output scale {} is not positive",
                self.output_scale
            )));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(LesError::Argument(format!(
                "noise variance {} is negative",
                self.noise_var
            )));
        }
        Ok(())
    }

    /// `1 / l_i^2` per dimension.
    pub fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Log-normal prior `logn(log_mean, log_std)` shared by every lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthscalePrior {
    pub log_mean: f64,
    pub log_std: f64,
}

impl LengthscalePrior {
    pub fn new(log_mean: f64, log_std: f64) -> Result<Self> {
        if !(log_std.is_finite() && log_std > 0.0) || !log_mean.is_finite() {
            return Err(LesError::Argument(format!(
                "lognormal prior needs finite mean and positive std, got ({log_mean}, {log_std})"
            )));
        }
        Ok(Self { log_mean, log_std })
    }

    /// Closed-form mean `exp(mu + sigma^2 / 2)`.
    pub fn mean(&self) -> f64 {
        (self.log_mean + 0.5 * self.log_std * self.log_std).exp()
    }

    pub fn log_density(&self, lengthscale: f64) -> f64 {
        let z = (lengthscale.ln() - self.log_mean) / self.log_std;
        -lengthscale.ln() - self.log_std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }
}

#[inline]
pub(crate) fn se_kernel(a: &[f64], b: &[f64], inv_sq_ls: &[f64], output_scale: f64) -> f64 {
    let mut q = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        q += d * d * inv_sq_ls[k];
    }
    output_scale * (-0.5 * q).exp()
}

/// `k(a, b) = s * exp(-0.5 * sum_i (a_i - b_i)^2 / l_i^2)`.
pub fn kernel_eval(a: &[f64], b: &[f64], hp: &GpHyperparams) -> Result<f64> {
    check_dim(hp.dim(), a.len(), "kernel argument a")?;
    check_dim(hp.dim(), b.len(), "kernel argument b")?;
    Ok(se_kernel(a, b, &hp.inv_sq_lengthscales(), hp.output_scale))
}

/// Noise-free kernel Gram matrix.
pub fn gram_matrix(points: &[Vec<f64>], hp: &GpHyperparams) -> DMatrix<f64> {
    let inv = hp.inv_sq_lengthscales();
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = hp.output_scale;
        for i in j + 1..n {
            let v = se_kernel(&points[i], &points[j], &inv, hp.output_scale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Posterior mean and variances at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Variance of the latent function value.
    pub latent_var: f64,
    /// Variance of a noisy observation, `latent_var + noise_var`.
    pub obs_var: f64,
}

/// A GP conditioned on a dataset, with the training covariance factorized.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    hyperparams: GpHyperparams,
    inv_sq_ls: Vec<f64>,
    factor: Factor,
    alpha: Vec<f64>,
}

/// Conditions the GP on `dataset`. An empty dataset yields the prior.
pub fn fit(dataset: &Dataset, hp: &GpHyperparams) -> Result<GpModel> {
    GpModel::fit(dataset.clone(), hp.clone())
}

impl GpModel {
    pub fn fit(dataset: Dataset, hyperparams: GpHyperparams) -> Result<Self> {
        hyperparams.validate()?;
        check_dim(dataset.dim(), hyperparams.dim(), "hyperparameters")?;
        let mut k = gram_matrix(dataset.inputs(), &hyperparams);
        for i in 0..k.nrows() {
            k[(i, i)] += hyperparams.noise_var;
        }
        let factor = linalg::factor_with_jitter(&k, hyperparams.output_scale)?;
        let alpha = factor.solve(dataset.observations());
        let inv_sq_ls = hyperparams.inv_sq_lengthscales();
        Ok(Self {
            dataset,
            hyperparams,
            inv_sq_ls,
            factor,
            alpha,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn domain(&self) -> &BoxDomain {
        self.dataset.domain()
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    /// `(K + noise I)^{-1} y`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Noise variance plus whatever jitter the factorization needed.
    pub fn effective_noise(&self) -> f64 {
        self.hyperparams.noise_var + self.factor.jitter
    }

    #[inline]
    pub(crate) fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        se_kernel(a, b, &self.inv_sq_ls, self.hyperparams.output_scale)
    }

    /// Kernel vector between the training inputs and `x`.
    pub(crate) fn cross_cov(&self, x: &[f64]) -> Vec<f64> {
        self.dataset.inputs().iter().map(|xi| self.k(xi, x)).collect()
    }

    /// Returns `(k_X(x), L^{-1} k_X(x))`.
    pub(crate) fn whitened_cross(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let kx = self.cross_cov(x);
        let mut v = kx.clone();
        self.factor.solve_lower_in_place(&mut v);
        (kx, v)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        check_dim(self.dim(), x.len(), "prediction point")?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Prediction {
        let (kx, v) = self.whitened_cross(x);
        let mean = kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let latent_var = (self.hyperparams.output_scale - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        Prediction {
            mean,
            latent_var,
            obs_var: latent_var + self.hyperparams.noise_var,
        }
    }

    /// Caches the factorization of the covariance augmented with
    /// noisy virtual observations at `points`.
    pub fn augment(&self, points: &[Vec<f64>]) -> Result<AugmentedFactor> {
        for p in points {
            check_dim(self.dim(), p.len(), "virtual point")?;
            if !p.iter().all(|v| v.is_finite()) {
                return Err(LesError::Argument("non-finite virtual point".into()));
            }
        }
        AugmentedFactor::new(self, points.to_vec())
    }
}

/// Predictive `(mean, obs_var)` of `model` at `x`.
pub fn predict(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    let p = model.predict(x)?;
    Ok((p.mean, p.obs_var))
}

/// Block factorization of `K(D u Q) + noise I` reusing the cached training
/// factor `L`:
///
/// ```text
/// [ L    0 ]      cross = L^{-1} K(X, Q)
/// [ B^T  C ]      C C^T = K(Q, Q) + noise I - cross^T cross
/// ```
///
/// Only variances are needed from it, so the virtual observation values
/// never enter.
#[derive(Debug, Clone)]
pub struct AugmentedFactor {
    points: Vec<Vec<f64>>,
    cross: DMatrix<f64>,
    schur: Factor,
}

impl AugmentedFactor {
    fn new(model: &GpModel, points: Vec<Vec<f64>>) -> Result<Self> {
        let t = model.dataset.len();
        let p = points.len();
        let mut cross = DMatrix::zeros(t, p);
        for (j, q) in points.iter().enumerate() {
            let (_, v) = model.whitened_cross(q);
            cross.column_mut(j).copy_from_slice(&v);
        }
        let mut schur = gram_matrix(&points, &model.hyperparams);
        for i in 0..p {
            schur[(i, i)] += model.hyperparams.noise_var;
        }
        if t > 0 {
            schur -= cross.transpose() * &cross;
        }
        // Symmetrize away the rounding from the product above.
        for j in 0..p {
            for i in j + 1..p {
                let m = 0.5 * (schur[(i, j)] + schur[(j, i)]);
                schur[(i, j)] = m;
                schur[(j, i)] = m;
            }
        }
        let schur = linalg::factor_with_jitter(&schur, model.hyperparams.output_scale)?;
        Ok(Self { points, cross, schur })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Variance removed from the latent prediction at `x` by the virtual
    /// points, given the whitened training cross-covariance `v = L^{-1} k_X(x)`.
    pub(crate) fn variance_reduction(&self, model: &GpModel, x: &[f64], v: &[f64]) -> f64 {
        let mut u: Vec<f64> = self.points.iter().map(|q| model.k(q, x)).collect();
        if !v.is_empty() {
            for (j, uj) in u.iter_mut().enumerate() {
                let col = self.cross.column(j);
                let dot: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
                *uj -= dot;
            }
        }
        self.schur.solve_lower_in_place(&mut u);
        u.iter().map(|w| w * w).sum()
    }

    /// Whitened virtual-point covariance with a batch, `C^{-1}(K(Q,B) - cross^T V)`,
    /// where `v_batch` holds `L^{-1} k_X(b)` for each batch point.
    pub(crate) fn whitened_batch(&self, model: &GpModel, batch: &[Vec<f64>], v_batch: &[Vec<f64>]) -> DMatrix<f64> {
        let p = self.points.len();
        let mut w = DMatrix::zeros(p, batch.len());
        for (c, (b, v)) in batch.iter().zip(v_batch).enumerate() {
            let mut u: Vec<f64> = self.points.iter().map(|q| model.k(q, b)).collect();
            if !v.is_empty() {
                for (j, uj) in u.iter_mut().enumerate() {
                    let col = self.cross.column(j);
                    *uj -= col.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            self.schur.solve_lower_in_place(&mut u);
            w.column_mut(c).copy_from_slice(&u);
        }
        w
    }

    /// Noisy-observation variance at `x` given the data and the virtual points.
    pub fn obs_variance(&self, model: &GpModel, x: &[f64]) -> Result<f64> {
        check_dim(model.dim(), x.len(), "prediction point")?;
        let (_, v) = model.whitened_cross(x);
        let base = (model.hyperparams.output_scale - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        let latent = (base - self.variance_reduction(model, x, &v)).max(0.0);
        Ok(latent + model.hyperparams.noise_var)
    }

    /// Reconstructs the full augmented covariance from the block factor.
    pub fn reconstruct(&self, model: &GpModel) -> DMatrix<f64> {
        let t = model.dataset.len();
        let p = self.points.len();
        let mut l = DMatrix::zeros(t + p, t + p);
        l.view_mut((0, 0), (t, t)).copy_from(&model.factor.lower);
        l.view_mut((t, 0), (p, t)).copy_from(&self.cross.transpose());
        l.view_mut((t, t), (p, p)).copy_from(&self.schur.lower);
        &l * l.transpose()
    }
}

/// `sigma_y^2(x | D u Q)` for noisy virtual observations at `virtual_locations`.
pub fn augmented_variance(model: &GpModel, virtual_locations: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    model.augment(virtual_locations)?.obs_variance(model, x)
}

/// Differential entropy `0.5 * ln(2 pi e v)` of a Gaussian with variance `v`.
pub fn gaussian_entropy(variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(LesError::Argument(format!(
            "entropy needs a positive finite variance, got {variance}"
        )));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
}
