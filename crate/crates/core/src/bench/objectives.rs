//! Benchmark objectives on the unit cube and the model settings that go with
//! each of them.

use std::f64::consts::{E, PI, SQRT_2};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LesError, Result};
use crate::gp::HyperPrior;
use crate::gp::{BoxDomain, GpHyperparams, LengthscalePrior};
use crate::pathwise::{draw_basis, SamplePath, SmoothFunction};
use crate::rng::{derive_seed, rng_from_seed};

/// Observation noise standard deviation of GP-sample objectives.
pub const GP_OBJECTIVE_NOISE: f64 = 0.002;

/// Noise standard deviation assumed by the model on noiseless synthetic functions.
pub const SYNTHETIC_MODEL_NOISE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityLevel {
    High,
    Medium,
    Low,
    ExtremelyLow,
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 4] = [Self::High, Self::Medium, Self::Low, Self::ExtremelyLow];

    /// `(c1, c2)` with log-lengthscale mean `c1 sqrt(2) + ln sqrt(d)` and std `c2`.
    pub fn coefficients(self) -> (f64, f64) {
        let s3 = 3f64.sqrt();
        match self {
            Self::High => (-2.5, s3 / 5.0),
            Self::Medium => (-2.0, s3 / 4.0),
            Self::Low => (-1.0, s3 / 2.0),
            Self::ExtremelyLow => (1.0, s3),
        }
    }

    pub fn prior(self, d: usize) -> LengthscalePrior {
        let (c1, c2) = self.coefficients();
        LengthscalePrior {
            log_mean: c1 * SQRT_2 + (d as f64).sqrt().ln(),
            log_std: c2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::High => "high",
            Self::Medium => "medium",
            Self::Low => "low",
            Self::ExtremelyLow => "extremely_low",
        }
    }
}

/// `d` draws `exp(mu + sigma z)` from `prior`.
pub fn sample_lengthscales_from(prior: &LengthscalePrior, d: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(rng_seed);
    (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (prior.log_mean + prior.log_std * z).exp()
        })
        .collect()
}

pub fn sample_lengthscales(level: ComplexityLevel, d: usize, rng_seed: u64) -> Vec<f64> {
    sample_lengthscales_from(&level.prior(d), d, rng_seed)
}

/// How the surrogate is set up for an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub prior: HyperPrior,
    /// Starting point of every MAP fit.
    pub init: GpHyperparams,
    /// Hyperparameters used when they are treated as known.
    pub known: Option<GpHyperparams>,
    /// Fit on observations shifted and scaled to zero mean and unit variance.
    pub standardize: bool,
}

/// A black-box objective over `[0, 1]^d`.
pub trait Objective: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    /// Noisy evaluation at a unit-cube point.
    fn evaluate(&self, u: &[f64], rng: &mut ChaCha8Rng) -> Result<f64>;

    /// Noiseless value, where it is known.
    fn true_value(&self, u: &[f64]) -> Option<f64>;

    /// The point in the objective's own coordinates.
    fn to_native(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }

    fn model_spec(&self) -> ModelSpec;

    /// Noiseless objective as a smooth function of the unit-cube point, for
    /// measuring true local regret.
    fn smooth(&self) -> Option<&dyn SmoothFunction> {
        None
    }
}

/// A prior sample of a GP with lengthscales drawn at a complexity level.
#[derive(Debug, Clone)]
pub struct GpObjective {
    level: ComplexityLevel,
    true_lengthscales: Vec<f64>,
    true_path: SamplePath,
    noise_std: f64,
}

pub fn make_gp_objective(level: ComplexityLevel, d: usize, m: usize, rng_seed: u64) -> Result<GpObjective> {
    if d == 0 {
        return Err(LesError::Argument("dimension must be positive".into()));
    }
    let lengthscales = sample_lengthscales(level, d, derive_seed(rng_seed, 0));
    let hp = GpHyperparams::new(lengthscales.clone(), 1.0, GP_OBJECTIVE_NOISE * GP_OBJECTIVE_NOISE)?;
    let basis = Arc::new(draw_basis(&hp, m, derive_seed(rng_seed, 1))?);
    let mut rng = rng_from_seed(derive_seed(rng_seed, 2));
    let weights = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let true_path = SamplePath::prior(basis, weights, hp)?;
    Ok(GpObjective {
        level,
        true_lengthscales: lengthscales,
        true_path,
        noise_std: GP_OBJECTIVE_NOISE,
    })
}

impl GpObjective {
    pub fn level(&self) -> ComplexityLevel {
        self.level
    }

    pub fn true_lengthscales(&self) -> &[f64] {
        &self.true_lengthscales
    }

    pub fn true_path(&self) -> &SamplePath {
        &self.true_path
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn true_hyperparams(&self) -> &GpHyperparams {
        self.true_path.hyperparams()
    }
}

impl Objective for GpObjective {
    fn name(&self) -> String {
        format!("gp_{}_d{}", self.level.name(), self.dim())
    }

    fn dim(&self) -> usize {
        self.true_lengthscales.len()
    }

    fn evaluate(&self, u: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        check_dim(self.dim(), u.len(), "query")?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.true_path.value(u) + self.noise_std * z)
    }

    fn true_value(&self, u: &[f64]) -> Option<f64> {
        Some(self.true_path.value(u))
    }

    fn model_spec(&self) -> ModelSpec {
        let d = self.dim();
        let prior = self.level.prior(d);
        let noise = self.noise_std * self.noise_std;
        ModelSpec {
            prior: HyperPrior::LogNormal(prior),
            init: GpHyperparams::isotropic(d, prior.mean(), 1.0, noise).expect("prior mean is positive"),
            known: Some(self.true_hyperparams().clone()),
            standardize: false,
        }
    }

    fn smooth(&self) -> Option<&dyn SmoothFunction> {
        Some(&self.true_path)
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn ackley(x: &[f64]) -> f64 {
    let (a, b, c) = (20.0, 0.2, 2.0 * PI);
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (c * v).cos()).sum::<f64>() / n;
    -a * (-b * sq.sqrt()).exp() - cs.exp() + a + E
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Sphere,
    Ackley,
}

/// A noiseless test function on its conventional box, seen through the unit cube.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    kind: SyntheticKind,
    domain: BoxDomain,
}

impl SyntheticObjective {
    pub fn new(kind: SyntheticKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(LesError::Argument("dimension must be positive".into()));
        }
        let half = match kind {
            SyntheticKind::Sphere => 2.0,
            SyntheticKind::Ackley => 32.768,
        };
        Ok(Self {
            kind,
            domain: BoxDomain::new(vec![-half; d], vec![half; d])?,
        })
    }

    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Difference between the largest and smallest value on the box.
    pub fn value_range(&self) -> f64 {
        match self.kind {
            SyntheticKind::Sphere => sphere(self.domain.upper()),
            // the maximum sits near the corners; a fine grid along the diagonal finds it
            SyntheticKind::Ackley => {
                let d = self.dim();
                let hi = self.domain.upper()[0];
                (0..=32768)
                    .map(|i| ackley(&vec![hi * i as f64 / 32768.0; d]))
                    .fold(0.0, f64::max)
            }
        }
    }

    fn native_value(&self, x: &[f64]) -> f64 {
        match self.kind {
            SyntheticKind::Sphere => sphere(x),
            SyntheticKind::Ackley => ackley(x),
        }
    }
}

impl Objective for SyntheticObjective {
    fn name(&self) -> String {
        let base = match self.kind {
            SyntheticKind::Sphere => "sphere",
            SyntheticKind::Ackley => "ackley",
        };
        format!("{base}_d{}", self.dim())
    }

    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn evaluate(&self, u: &[f64], _rng: &mut ChaCha8Rng) -> Result<f64> {
        check_dim(self.dim(), u.len(), "query")?;
        let v = self.native_value(&self.domain.from_unit(u));
        if !v.is_finite() {
            return Err(LesError::Objective(format!("non-finite value at {u:?}")));
        }
        Ok(v)
    }

    fn true_value(&self, u: &[f64]) -> Option<f64> {
        Some(self.native_value(&self.domain.from_unit(u)))
    }

    fn to_native(&self, u: &[f64]) -> Vec<f64> {
        self.domain.from_unit(u)
    }

    fn model_spec(&self) -> ModelSpec {
        let d = self.dim();
        let root = (d as f64).sqrt();
        ModelSpec {
            prior: HyperPrior::Bounded {
                lower: 0.05,
                upper: root,
            },
            init: GpHyperparams::isotropic(d, 0.2 * root, 1.0, SYNTHETIC_MODEL_NOISE * SYNTHETIC_MODEL_NOISE)
                .expect("positive lengthscale"),
            known: None,
            standardize: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lognormal_draws_have_the_closed_form_mean() {
        let p = LengthscalePrior {
            log_mean: 0.0,
            log_std: 1.0,
        };
        let draws = sample_lengthscales_from(&p, 100_000, 3);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean / 0.5f64.exp() - 1.0).abs() < 0.02, "{mean}");
        let p = LengthscalePrior {
            log_mean: -0.7,
            log_std: 1e-14,
        };
        assert!(sample_lengthscales_from(&p, 10, 1)
            .iter()
            .all(|l| (l - (-0.7f64).exp()).abs() < 1e-9));
    }

    #[test]
    fn level_parameters() {
        let p = ComplexityLevel::High.prior(50);
        let want = -2.5 * 2f64.sqrt() + 0.5 * 50f64.ln();
        assert!((p.log_mean - want).abs() < 1e-12);
        assert!((p.log_mean + 1.5795).abs() < 1e-4);
        assert_eq!(ComplexityLevel::Medium.coefficients(), (-2.0, 3f64.sqrt() / 4.0));
        assert_eq!(ComplexityLevel::Low.coefficients(), (-1.0, 3f64.sqrt() / 2.0));
        assert_eq!(ComplexityLevel::ExtremelyLow.coefficients(), (1.0, 3f64.sqrt()));
        assert_eq!(
            sample_lengthscales(ComplexityLevel::Low, 4, 9),
            sample_lengthscales(ComplexityLevel::Low, 4, 9)
        );
    }

    #[test]
    fn gp_objectives_are_deterministic() {
        let a = make_gp_objective(ComplexityLevel::Medium, 3, 256, 5).unwrap();
        let b = make_gp_objective(ComplexityLevel::Medium, 3, 256, 5).unwrap();
        let mut rng = rng_from_seed(0);
        for _ in 0..10 {
            let u: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            assert_eq!(a.true_value(&u), b.true_value(&u));
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            a.evaluate(&[0.1, 0.2, 0.3], &mut r1).unwrap(),
            b.evaluate(&[0.1, 0.2, 0.3], &mut r2).unwrap()
        );
    }

    #[test]
    fn gp_objectives_have_unit_prior_variance() {
        let x = [0.3, 0.6];
        let vals: Vec<f64> = (0..500)
            .map(|s| {
                make_gp_objective(ComplexityLevel::Medium, 2, 1024, 100 + s)
                    .unwrap()
                    .true_value(&x)
                    .unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 500.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 499.0;
        assert!((var - 1.0).abs() <= 0.15, "{var}");
    }

    /// Probability that two points `h` apart along one axis differ by less
    /// than `tol`, integrating the lengthscale over the level's prior.
    fn close_probability(level: ComplexityLevel, d: usize, h: f64, tol: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        let prior = level.prior(d);
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let n = 8000;
        let dz = 16.0 / n as f64;
        (0..=n)
            .map(|i| {
                let z = -8.0 + i as f64 * dz;
                let l = (prior.log_mean + prior.log_std * z).exp();
                let sd = (2.0 * (1.0 - (-0.5 * h * h / (l * l)).exp())).sqrt();
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * dz * (-0.5 * z * z).exp() / (2.0 * PI).sqrt() * (2.0 * std_normal.cdf(tol / sd) - 1.0)
            })
            .sum()
    }

    #[test]
    fn extremely_low_complexity_is_nearly_constant() {
        let want = close_probability(ComplexityLevel::ExtremelyLow, 5, 0.1, 0.05);
        assert!(want > 0.8);
        let seeds = 1000;
        let mut close = 0;
        for s in 0..seeds {
            let f = make_gp_objective(ComplexityLevel::ExtremelyLow, 5, 1024, s).unwrap();
            let a = [0.4, 0.5, 0.5, 0.5, 0.5];
            let b = [0.5, 0.5, 0.5, 0.5, 0.5];
            if (f.true_value(&a).unwrap() - f.true_value(&b).unwrap()).abs() < 0.05 {
                close += 1;
            }
        }
        let rate = close as f64 / seeds as f64;
        let se = (want * (1.0 - want) / seeds as f64).sqrt();
        assert!((rate - want).abs() <= 4.0 * se, "{rate} vs {want}");
        // a short-lengthscale level is nowhere near as flat
        assert!(close_probability(ComplexityLevel::High, 5, 0.1, 0.05) < 0.5);
    }

    #[test]
    fn gp_noise_has_the_stated_scale() {
        let f = make_gp_objective(ComplexityLevel::Low, 2, 64, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = f.true_value(&[0.5, 0.5]).unwrap();
        let n = 20000;
        let var = (0..n)
            .map(|_| (f.evaluate(&[0.5, 0.5], &mut rng).unwrap() - truth).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var.sqrt() / GP_OBJECTIVE_NOISE - 1.0).abs() < 0.03);
    }

    #[test]
    fn sphere_examples() {
        assert_eq!(sphere(&[0.0, 0.0]), 0.0);
        assert_eq!(sphere(&[1.0, 1.0]), 2.0);
        assert!((sphere(&[0.3, -0.4]) - 0.25).abs() < 1e-15);
        let s = SyntheticObjective::new(SyntheticKind::Sphere, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.evaluate(&[0.5, 0.5], &mut rng).unwrap(), 0.0);
        assert_eq!(s.evaluate(&[1.0, 0.75], &mut rng).unwrap(), 5.0);
        assert_eq!(s.value_range(), 8.0);
    }

    #[test]
    fn ackley_examples() {
        assert!(ackley(&[0.0, 0.0, 0.0]).abs() < 1e-12);
        // d = 1, x = 1: 20 + e - 20 exp(-0.2) - exp(cos 2 pi)
        let want = 20.0 + E - 20.0 * (-0.2f64).exp() - 1f64.exp();
        assert!((ackley(&[1.0]) - want).abs() < 1e-12);
        assert!((ackley(&[1.0]) - 3.6253849384403627).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| 65.536 * rng.random::<f64>() - 32.768).collect();
            assert!(ackley(&x) >= 0.0);
        }
        let a = SyntheticObjective::new(SyntheticKind::Ackley, 2).unwrap();
        let r = a.value_range();
        assert!(r > 21.0 && r < 23.0, "{r}");
    }

    #[test]
    fn model_specs() {
        let f = make_gp_objective(ComplexityLevel::Medium, 3, 32, 0).unwrap();
        let spec = f.model_spec();
        let prior = ComplexityLevel::Medium.prior(3);
        assert_eq!(
            spec.init.lengthscales,
            vec![(prior.log_mean + 0.5 * prior.log_std.powi(2)).exp(); 3]
        );
        assert_eq!(spec.known.unwrap().lengthscales, f.true_lengthscales());
        assert!(!spec.standardize);

        let s = SyntheticObjective::new(SyntheticKind::Ackley, 4).unwrap().model_spec();
        assert_eq!(
            s.prior,
            HyperPrior::Bounded {
                lower: 0.05,
                upper: 2.0
            }
        );
        assert!((s.init.lengthscales[0] - 0.4).abs() < 1e-15);
        assert!((s.init.noise_var - 1e-6).abs() < 1e-20);
        assert!(s.standardize && s.known.is_none());
    }
}
