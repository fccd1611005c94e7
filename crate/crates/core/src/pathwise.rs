//! Analytic GP posterior sample paths.
//!
//! A path is a random-feature draw from the prior plus a kernel-weighted
//! correction that moves it onto the posterior (Matheron's rule):
//!
//! ```text
//! f(x) = sum_i w_i phi_i(x) + sum_j v_j k(x, x_j)
//! phi_i(x) = amp * cos(omega_i . (x / l) + b_i),   amp = sqrt(2 s / M)
//! v = (K + noise I)^{-1} (y - Phi w - eps),         eps ~ N(0, noise I)
//! ```
//!
//! Paths are smooth in `x` and their gradients are exact.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, LesError, Result};
use crate::gp::{GpHyperparams, GpModel};
use crate::rng::{derive_seed, rng_from_seed};

/// Default number of random features per path.
pub const DEFAULT_NUM_FEATURES: usize = 1024;

/// A differentiable scalar function on `R^d`.
pub trait SmoothFunction {
    fn dim(&self) -> usize;

    /// Writes the gradient at `x` into `grad` and returns the value.
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_and_grad(x, &mut g)
    }
}

/// Random Fourier features of the SE kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    dim: usize,
    /// Standard-normal spectral draws, row-major `M x d`.
    frequencies: Vec<f64>,
    /// Frequencies divided by the lengthscales, row-major `M x d`.
    scaled: Vec<f64>,
    /// Same, stored per dimension (`d x M`) for the batched feature sums.
    scaled_by_dim: Vec<f64>,
    phases: Vec<f64>,
    amp: f64,
}

impl FeatureBasis {
    pub fn from_parts(frequencies: Vec<f64>, phases: Vec<f64>, hp: &GpHyperparams) -> Result<Self> {
        hp.validate()?;
        let dim = hp.dim();
        let m = phases.len();
        if m == 0 || frequencies.len() != m * dim {
            return Err(LesError::Argument(format!(
                "basis needs M >= 1 phases and M x d = {} frequencies, got {} and {}",
                m * dim,
                m,
                frequencies.len()
            )));
        }
        let scaled: Vec<f64> = frequencies
            .chunks(dim)
            .flat_map(|row| row.iter().zip(&hp.lengthscales).map(|(w, l)| w / l))
            .collect();
        let scaled_by_dim = (0..dim)
            .flat_map(|k| scaled.iter().skip(k).step_by(dim).copied())
            .collect();
        Ok(Self {
            dim,
            frequencies,
            scaled,
            scaled_by_dim,
            phases,
            amp: (2.0 * hp.output_scale / m as f64).sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn amp(&self) -> f64 {
        self.amp
    }

    /// Feature vector `phi(x)`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut args = self.arguments(x);
        let mut sines = vec![0.0; args.len()];
        sin_cos_in_place(&mut args, &mut sines);
        args.iter_mut().for_each(|c| *c *= self.amp);
        args
    }

    /// Feature arguments `omega_i . (x / l) + b_i`.
    fn arguments(&self, x: &[f64]) -> Vec<f64> {
        let m = self.phases.len();
        let mut args = self.phases.clone();
        for (col, xk) in self.scaled_by_dim.chunks_exact(m).zip(x) {
            for (a, c) in args.iter_mut().zip(col) {
                *a += c * xk;
            }
        }
        args
    }

    /// `sum_i w_i phi_i(x)`, adding its gradient into `grad`.
    fn weighted_value_grad(&self, weights: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.phases.len();
        let mut args = self.arguments(x);
        let mut sines = vec![0.0; m];
        sin_cos_in_place(&mut args, &mut sines);
        let mut value = 0.0;
        for ((c, s), w) in args.iter().zip(sines.iter_mut()).zip(weights) {
            value += w * c;
            *s *= w;
        }
        for (g, col) in grad.iter_mut().zip(self.scaled_by_dim.chunks_exact(m)) {
            *g -= self.amp * dot(&sines, col);
        }
        value * self.amp
    }

    fn weighted_value(&self, weights: &[f64], x: &[f64]) -> f64 {
        let mut args = self.arguments(x);
        let mut sines = vec![0.0; args.len()];
        sin_cos_in_place(&mut args, &mut sines);
        dot(&args, weights) * self.amp
    }
}

// Above this magnitude the three-part reduction below loses accuracy.
const FAST_TRIG_LIMIT: f64 = 1e5;

/// Replaces each `args[i]` by its cosine and writes its sine to `sines[i]`.
///
/// Branch-free so the compiler can vectorize it; agrees with the libm
/// routines to a few ulp.
fn sin_cos_in_place(args: &mut [f64], sines: &mut [f64]) {
    if args.iter().any(|a| !(a.abs() <= FAST_TRIG_LIMIT)) {
        for (a, s) in args.iter_mut().zip(sines.iter_mut()) {
            let (sa, ca) = a.sin_cos();
            *s = sa;
            *a = ca;
        }
        return;
    }
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const TWO_OVER_PI: f64 = std::f64::consts::FRAC_2_PI;
    const PIO2_1: f64 = 1.570_796_326_734_125_614_17;
    const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
    const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
    const S: [f64; 6] = [
        -1.666_666_666_666_663_243_48e-1,
        8.333_333_333_322_489_461_24e-3,
        -1.984_126_982_985_794_931_34e-4,
        2.755_731_370_707_006_767_89e-6,
        -2.505_076_025_340_686_341_95e-8,
        1.589_690_995_211_550_102_21e-10,
    ];
    const C: [f64; 6] = [
        4.166_666_666_666_660_190_37e-2,
        -1.388_888_888_887_410_957_49e-3,
        2.480_158_728_947_672_941_78e-5,
        -2.755_731_435_139_066_330_35e-7,
        2.087_572_321_298_174_827_90e-9,
        -1.135_964_755_778_819_482_65e-11,
    ];
    for (a, s) in args.iter_mut().zip(sines.iter_mut()) {
        let shifted = *a * TWO_OVER_PI + SHIFT;
        let q = shifted.to_bits();
        let n = shifted - SHIFT;
        let r = ((*a - n * PIO2_1) - n * PIO2_2) - n * PIO2_3;
        let z = r * r;
        let sr = r + r * z * (S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5])))));
        let cr = 1.0 - 0.5 * z + z * z * (C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5])))));
        // quadrant q mod 4 rotates (sin, cos) by multiples of pi/2
        let swap = q & 1 == 1;
        let (sv, cv) = if swap { (cr, sr) } else { (sr, cr) };
        let sign_s = (q & 2) << 62;
        let sign_c = (q.wrapping_add(1) & 2) << 62;
        *s = f64::from_bits(sv.to_bits() ^ sign_s);
        *a = f64::from_bits(cv.to_bits() ^ sign_c);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `m` spectral frequencies and phases for the kernel of `hp`.
pub fn draw_basis(hp: &GpHyperparams, m: usize, rng_seed: u64) -> Result<FeatureBasis> {
    if m == 0 {
        return Err(LesError::Argument("basis needs at least one feature".into()));
    }
    hp.validate()?;
    let mut rng = rng_from_seed(rng_seed);
    let d = hp.dim();
    let frequencies: Vec<f64> = (0..m * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let phases: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    FeatureBasis::from_parts(frequencies, phases, hp)
}

/// One analytic posterior draw.
#[derive(Debug, Clone)]
pub struct SamplePath {
    weights: Vec<f64>,
    basis: Arc<FeatureBasis>,
    /// Training inputs, row-major `t x d`.
    correction_inputs: Vec<f64>,
    correction_coeffs: Vec<f64>,
    hyperparams: GpHyperparams,
    inv_sq_ls: Vec<f64>,
}

impl SamplePath {
    pub fn new(
        basis: Arc<FeatureBasis>,
        weights: Vec<f64>,
        correction_inputs: &[Vec<f64>],
        correction_coeffs: Vec<f64>,
        hyperparams: GpHyperparams,
    ) -> Result<Self> {
        hyperparams.validate()?;
        let d = hyperparams.dim();
        check_dim(d, basis.dim(), "basis")?;
        if weights.len() != basis.num_features() {
            return Err(LesError::Argument(format!(
                "{} weights for {} features",
                weights.len(),
                basis.num_features()
            )));
        }
        if correction_inputs.len() != correction_coeffs.len() {
            return Err(LesError::Argument(format!(
                "{} correction inputs but {} coefficients",
                correction_inputs.len(),
                correction_coeffs.len()
            )));
        }
        let mut flat = Vec::with_capacity(correction_inputs.len() * d);
        for x in correction_inputs {
            check_dim(d, x.len(), "correction input")?;
            flat.extend_from_slice(x);
        }
        let inv_sq_ls = hyperparams.inv_sq_lengthscales();
        Ok(Self {
            weights,
            basis,
            correction_inputs: flat,
            correction_coeffs,
            hyperparams,
            inv_sq_ls,
        })
    }

    /// A prior-only path (no correction term).
    pub fn prior(basis: Arc<FeatureBasis>, weights: Vec<f64>, hyperparams: GpHyperparams) -> Result<Self> {
        Self::new(basis, weights, &[], Vec::new(), hyperparams)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn correction_coeffs(&self) -> &[f64] {
        &self.correction_coeffs
    }

    pub fn correction_inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.correction_inputs.chunks_exact(self.dim())
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    fn correction_value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        let s = self.hyperparams.output_scale;
        let mut value = 0.0;
        for (xj, vj) in self.correction_inputs.chunks_exact(d).zip(&self.correction_coeffs) {
            let mut q = 0.0;
            for k in 0..d {
                let diff = x[k] - xj[k];
                q += diff * diff * self.inv_sq_ls[k];
            }
            let kv = vj * s * (-0.5 * q).exp();
            value += kv;
            for k in 0..d {
                grad[k] -= kv * (x[k] - xj[k]) * self.inv_sq_ls[k];
            }
        }
        value
    }

    /// Upper bound on the spectral norm of the Hessian anywhere, used to pick
    /// safe gradient-descent step sizes.
    pub fn hessian_bound(&self) -> f64 {
        let d = self.dim();
        let prior: f64 = self
            .basis
            .scaled
            .chunks_exact(d)
            .zip(&self.weights)
            .map(|(row, w)| w.abs() * dot(row, row))
            .sum::<f64>()
            * self.basis.amp;
        // ||hess k(x, x_j)|| <= s * max_i(1 / l_i^2) * sup_r (1 + r^2) e^{-r^2/2} = 2 s e^{-1/2} / l_min^2
        let max_inv = self.inv_sq_ls.iter().cloned().fold(0.0, f64::max);
        let kernel = 2.0 * (-0.5f64).exp() * self.hyperparams.output_scale * max_inv;
        prior + kernel * self.correction_coeffs.iter().map(|v| v.abs()).sum::<f64>()
    }
}

impl SmoothFunction for SamplePath {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    #[inline]
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let prior = self.basis.weighted_value_grad(&self.weights, x, grad);
        prior + self.correction_value_grad(x, grad)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let s = self.hyperparams.output_scale;
        let correction: f64 = self
            .correction_inputs
            .chunks_exact(d)
            .zip(&self.correction_coeffs)
            .map(|(xj, vj)| {
                let q: f64 = (0..d).map(|k| (x[k] - xj[k]).powi(2) * self.inv_sq_ls[k]).sum();
                vj * s * (-0.5 * q).exp()
            })
            .sum();
        self.basis.weighted_value(&self.weights, x) + correction
    }
}

/// `v = (K + noise I)^{-1} (y - Phi w - eps)` with a fresh noise draw `eps`.
pub fn matheron_coefficients(
    model: &GpModel,
    basis: &FeatureBasis,
    weights: &[f64],
    rng_seed: u64,
) -> Result<Vec<f64>> {
    check_dim(model.dim(), basis.dim(), "basis")?;
    if weights.len() != basis.num_features() {
        return Err(LesError::Argument(format!(
            "{} weights for {} features",
            weights.len(),
            basis.num_features()
        )));
    }
    let ds = model.dataset();
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(rng_seed);
    let noise_std = model.effective_noise().sqrt();
    let residual: Vec<f64> = ds
        .inputs()
        .iter()
        .zip(ds.observations())
        .map(|(x, y)| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y - basis.weighted_value(weights, x) - noise_std * eps
        })
        .collect();
    let v = model.factor().solve(&residual);
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(LesError::Numerical("non-finite Matheron coefficients".into()))
    }
}

/// Draws one posterior path on a shared basis. Weights come from
/// `derive_seed(seed, 0)`, the Matheron noise from `derive_seed(seed, 1)`.
pub fn draw_path(model: &GpModel, basis: Arc<FeatureBasis>, rng_seed: u64) -> Result<SamplePath> {
    let mut rng = rng_from_seed(derive_seed(rng_seed, 0));
    let weights: Vec<f64> = (0..basis.num_features())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let coeffs = matheron_coefficients(model, &basis, &weights, derive_seed(rng_seed, 1))?;
    SamplePath::new(
        basis,
        weights,
        model.dataset().inputs(),
        coeffs,
        model.hyperparams().clone(),
    )
}

pub fn eval_path(path: &SamplePath, x: &[f64]) -> Result<f64> {
    check_dim(path.dim(), x.len(), "path argument")?;
    Ok(path.value(x))
}

pub fn eval_path_grad(path: &SamplePath, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(path.dim(), x.len(), "path argument")?;
    let mut g = vec![0.0; x.len()];
    path.value_and_grad(x, &mut g);
    Ok(g)
}

#[cfg(test)]
mod tests;
