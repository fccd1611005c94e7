//! Fixed-length local optimizer runs on smooth functions and arc-length
//! discretization of the resulting iterate sequences.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LesError, Result};
use crate::gp::BoxDomain;
use crate::pathwise::SmoothFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[serde(alias = "gd")]
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl OptimizerConfig {
    /// ADAM with 500 steps, learning rate 0.002 and the usual moment decays.
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            steps: 500,
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    /// Plain gradient descent, 500 steps at learning rate 1e-4.
    pub fn gradient_descent() -> Self {
        Self {
            kind: OptimizerKind::GradientDescent,
            learning_rate: 1e-4,
            ..Self::adam()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(LesError::Argument("optimizer needs at least one step".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LesError::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(LesError::Argument(format!(
                "moment decays must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps_hat > 0.0) {
            return Err(LesError::Argument("eps_hat must be positive".into()));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

/// Iterates `z_0, ..., z_N` of one optimizer run and the function values there.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentSequence {
    pub iterates: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Set when a non-finite gradient cut the run short.
    pub aborted: bool,
}

impl DescentSequence {
    pub fn start(&self) -> &[f64] {
        &self.iterates[0]
    }

    pub fn terminal(&self) -> &[f64] {
        self.iterates.last().expect("sequence has a start point")
    }

    pub fn terminal_value(&self) -> f64 {
        *self.values.last().expect("sequence has a start value")
    }

    /// Length of the polyline through the iterates.
    pub fn arc_length(&self) -> f64 {
        self.iterates.windows(2).map(|w| distance(&w[0], &w[1])).sum()
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs exactly `cfg.steps` optimizer steps on `f` from `start`, projecting
/// every iterate onto `domain`.
pub fn descend<F: SmoothFunction + ?Sized>(
    f: &F,
    start: &[f64],
    cfg: &OptimizerConfig,
    domain: &BoxDomain,
) -> Result<DescentSequence> {
    cfg.validate()?;
    let d = domain.dim();
    check_dim(d, start.len(), "descent start")?;
    check_dim(d, f.dim(), "descent objective")?;
    if !domain.contains(start) {
        return Err(LesError::Argument(format!(
            "descent start {start:?} outside the domain"
        )));
    }

    let mut z = start.to_vec();
    let mut grad = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    let mut values = Vec::with_capacity(cfg.steps + 1);
    let mut value = f.value_and_grad(&z, &mut grad);
    iterates.push(z.clone());
    values.push(value);
    let mut aborted = false;
    let (mut b1t, mut b2t) = (1.0, 1.0);

    for _ in 0..cfg.steps {
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            aborted = true;
            break;
        }
        match cfg.kind {
            OptimizerKind::GradientDescent => {
                for (zk, gk) in z.iter_mut().zip(&grad) {
                    *zk -= cfg.learning_rate * gk;
                }
            }
            OptimizerKind::Adam => {
                b1t *= cfg.beta1;
                b2t *= cfg.beta2;
                for k in 0..d {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
                    let m_hat = m[k] / (1.0 - b1t);
                    let v_hat = v[k] / (1.0 - b2t);
                    z[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_hat);
                }
            }
        }
        domain.clip_in_place(&mut z);
        let next = f.value_and_grad(&z, &mut grad);
        if !next.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            aborted = true;
            break;
        }
        value = next;
        iterates.push(z.clone());
        values.push(value);
    }
    if aborted {
        log::warn!(
            "descent aborted after {} steps: non-finite gradient",
            iterates.len() - 1
        );
    }
    Ok(DescentSequence {
        iterates,
        values,
        aborted,
    })
}

/// `p` points equally spaced by arc length along the polyline through the
/// iterates, including both endpoints.
pub fn discretize(seq: &DescentSequence, p: usize) -> Result<Vec<Vec<f64>>> {
    if p < 2 {
        return Err(LesError::Argument(format!("need at least 2 support points, got {p}")));
    }
    let pts = &seq.iterates;
    if pts.is_empty() {
        return Err(LesError::Argument("empty descent sequence".into()));
    }
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + distance(&w[0], &w[1]));
    }
    let total = *cum.last().unwrap();
    if total < 1e-12 {
        return Ok(vec![pts[0].clone(); p]);
    }

    let mut out = Vec::with_capacity(p);
    out.push(pts[0].clone());
    let mut seg = 0;
    for k in 1..p - 1 {
        let target = total * k as f64 / (p - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let frac = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (&pts[seg], &pts[seg + 1]);
        out.push(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect());
    }
    out.push(pts[pts.len() - 1].clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyperparams;
    use crate::pathwise::{draw_basis, FeatureBasis, SamplePath};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    struct Quadratic(usize);

    impl SmoothFunction for Quadratic {
        fn dim(&self) -> usize {
            self.0
        }
        fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad.copy_from_slice(x);
            0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    fn seq(points: &[&[f64]]) -> DescentSequence {
        DescentSequence {
            iterates: points.iter().map(|p| p.to_vec()).collect(),
            values: vec![0.0; points.len()],
            aborted: false,
        }
    }

    fn random_path(seed: u64, d: usize) -> SamplePath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ls: Vec<f64> = (0..d).map(|_| 0.15 + 0.5 * rng.random::<f64>()).collect();
        let hp = GpHyperparams::new(ls, 1.0, 1e-4).unwrap();
        let basis = Arc::new(draw_basis(&hp, 128, seed).unwrap());
        let w: Vec<f64> = (0..128).map(|_| rng.sample(StandardNormal)).collect();
        SamplePath::prior(basis, w, hp).unwrap()
    }

    #[test]
    fn zero_path_stays_put() {
        let hp = GpHyperparams::isotropic(2, 0.3, 1.0, 1e-4).unwrap();
        let basis = Arc::new(draw_basis(&hp, 16, 1).unwrap());
        let path = SamplePath::prior(basis, vec![0.0; 16], hp).unwrap();
        let start = [0.3, 0.6];
        for cfg in [OptimizerConfig::adam(), OptimizerConfig::gradient_descent()] {
            let s = descend(&path, &start, &cfg, &BoxDomain::unit(2)).unwrap();
            assert_eq!(s.iterates.len(), 501);
            assert!(s.iterates.iter().all(|z| z == &start));
        }
    }

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        let path = random_path(4, 3);
        let start = [0.5, 0.5, 0.5];
        let cfg = OptimizerConfig {
            steps: 1,
            ..OptimizerConfig::adam()
        };
        let s = descend(&path, &start, &cfg, &BoxDomain::unit(3)).unwrap();
        for k in 0..3 {
            let step = (s.iterates[1][k] - start[k]).abs();
            assert!(
                (step - cfg.learning_rate).abs() <= 0.01 * cfg.learning_rate,
                "coord {k}: {step}"
            );
        }
    }

    #[test]
    fn gd_on_quadratic_matches_hand_iteration() {
        let dom = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::GradientDescent,
            steps: 2,
            learning_rate: 0.1,
            ..OptimizerConfig::adam()
        };
        let s = descend(&Quadratic(2), &[1.0, 1.0], &cfg, &dom).unwrap();
        assert_eq!(s.iterates[1], vec![0.9, 0.9]);
        for v in &s.iterates[2] {
            assert!((v - 0.81).abs() < 1e-15);
        }
    }

    #[test]
    fn gd_on_quadratic_built_from_correction_term() {
        // -L^2 k(x, 0) with a huge lengthscale L is 0.5 |x|^2 up to O(|x|^4 / L^2)
        let ls = 1000.0;
        let hp = GpHyperparams::isotropic(2, ls, 1.0, 1e-4).unwrap();
        let basis = Arc::new(FeatureBasis::from_parts(vec![0.0, 0.0], vec![0.0], &hp).unwrap());
        let path = SamplePath::new(basis, vec![0.0], &[vec![0.0, 0.0]], vec![-ls * ls], hp).unwrap();
        let dom = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::GradientDescent,
            steps: 2,
            learning_rate: 0.1,
            ..OptimizerConfig::adam()
        };
        let s = descend(&path, &[1.0, 1.0], &cfg, &dom).unwrap();
        for (got, want) in s.iterates[1].iter().zip([0.9, 0.9]) {
            assert!((got - want).abs() < 1e-5);
        }
        for (got, want) in s.iterates[2].iter().zip([0.81, 0.81]) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let dom = BoxDomain::unit(2);
        assert!(descend(&Quadratic(2), &[1.5, 0.0], &OptimizerConfig::adam(), &dom).is_err());
        assert!(descend(&Quadratic(2), &[0.5], &OptimizerConfig::adam(), &dom).is_err());
        let bad = OptimizerConfig {
            steps: 0,
            ..OptimizerConfig::adam()
        };
        assert!(descend(&Quadratic(2), &[0.5, 0.5], &bad, &dom).is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::adam()
        };
        assert!(bad.validate().is_err());
        assert!(discretize(&seq(&[&[0.0]]), 1).is_err());
    }

    struct Blowup;

    impl SmoothFunction for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = if x[0] < 0.45 { f64::NAN } else { 1.0 };
            x[0]
        }
    }

    #[test]
    fn non_finite_gradient_aborts_at_last_finite_iterate() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::GradientDescent,
            steps: 100,
            learning_rate: 0.02,
            ..OptimizerConfig::adam()
        };
        let s = descend(&Blowup, &[0.5], &cfg, &BoxDomain::unit(1)).unwrap();
        assert!(s.aborted);
        assert!(s.terminal()[0] >= 0.45);
        assert!(s.iterates.len() < 101);
    }

    #[test]
    fn discretize_examples() {
        let line: Vec<Vec<f64>> = (0..=10).map(|i| vec![i as f64 / 10.0, 0.0]).collect();
        let s = DescentSequence {
            values: vec![0.0; 11],
            iterates: line,
            aborted: false,
        };
        let pts = discretize(&s, 3).unwrap();
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert!((pts[1][0] - 0.5).abs() < 1e-15 && pts[1][1] == 0.0);
        assert_eq!(pts[2], vec![1.0, 0.0]);
        assert_eq!(discretize(&s, 2).unwrap(), vec![vec![0.0, 0.0], vec![1.0, 0.0]]);

        let l = seq(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let pts = discretize(&l, 3).unwrap();
        assert_eq!(pts, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);

        let still = seq(&[&[0.3, 0.3], &[0.3, 0.3]]);
        assert_eq!(discretize(&still, 4).unwrap(), vec![vec![0.3, 0.3]; 4]);
    }

    #[test]
    fn gd_descends_monotonically_with_small_steps() {
        for seed in 0..20u64 {
            let d = 1 + (seed as usize % 5);
            let path = random_path(seed, d);
            let eta = 0.01 / path.hessian_bound();
            let cfg = OptimizerConfig {
                kind: OptimizerKind::GradientDescent,
                steps: 200,
                learning_rate: eta,
                ..OptimizerConfig::adam()
            };
            let start = vec![0.5; d];
            let s = descend(&path, &start, &cfg, &BoxDomain::unit(d)).unwrap();
            for w in s.values.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn converged_gd_is_stationary_or_on_boundary() {
        for seed in 0..10u64 {
            let path = random_path(100 + seed, 2);
            let eta = 0.5 / path.hessian_bound();
            let cfg = OptimizerConfig {
                kind: OptimizerKind::GradientDescent,
                steps: 5000,
                learning_rate: eta,
                ..OptimizerConfig::adam()
            };
            let dom = BoxDomain::unit(2);
            let s = descend(&path, &[0.5, 0.5], &cfg, &dom).unwrap();
            let n = s.iterates.len();
            let last = &s.iterates[n - 1];
            if distance(last, &s.iterates[n - 2]) < 1e-10 {
                let mut g = [0.0; 2];
                path.value_and_grad(last, &mut g);
                let on_boundary = last.iter().any(|v| *v == 0.0 || *v == 1.0);
                assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6 / eta || on_boundary);
            }
        }
    }

    /// Walks the polyline from the start for every query.
    fn point_at_arc_length(pts: &[Vec<f64>], target: f64) -> Vec<f64> {
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let len = distance(&w[0], &w[1]);
            if len > 0.0 && acc + len >= target {
                let t = (target - acc) / len;
                return w[0].iter().zip(&w[1]).map(|(a, b)| a + t * (b - a)).collect();
            }
            acc += len;
        }
        pts[pts.len() - 1].clone()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn iterates_stay_in_box_and_support_is_uniform(seed in any::<u64>(), p in 2usize..12) {
            let d = 2;
            let path = random_path(seed, d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let cfg = OptimizerConfig { steps: 300, learning_rate: 0.01, ..OptimizerConfig::adam() };
            let dom = BoxDomain::unit(d);
            let s = descend(&path, &start, &cfg, &dom).unwrap();
            prop_assert_eq!(&s.iterates[0], &start);
            prop_assert!(s.iterates.iter().all(|z| dom.contains(z)));
            let support = discretize(&s, p).unwrap();
            prop_assert_eq!(support.len(), p);
            prop_assert_eq!(&support[0], &s.iterates[0]);
            prop_assert_eq!(&support[p - 1], s.iterates.last().unwrap());
            let total = s.arc_length();
            if total >= 1e-12 {
                for (k, q) in support.iter().enumerate() {
                    let want = point_at_arc_length(&s.iterates, total * k as f64 / (p - 1) as f64);
                    prop_assert!(distance(q, &want) <= 1e-9, "k {}: {:?} vs {:?}", k, q, want);
                }
            }
        }
    }
}
