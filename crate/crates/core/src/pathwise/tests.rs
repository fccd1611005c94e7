use super::*;
use crate::gp::{kernel_eval, BoxDomain, Dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hp(d: usize, l: f64) -> GpHyperparams {
    GpHyperparams::isotropic(d, l, 1.0, 1e-4).unwrap()
}

fn five_point_model(noise: f64) -> GpModel {
    let hp = GpHyperparams::new(vec![0.2], 1.0, noise).unwrap();
    let xs = [0.05, 0.3, 0.45, 0.7, 0.95].iter().map(|x| vec![*x]).collect();
    let ys = vec![0.4, -0.8, -0.2, 1.0, 0.3];
    GpModel::fit(Dataset::from_points(BoxDomain::unit(1), xs, ys).unwrap(), hp).unwrap()
}

/// Independent transcription of the path formula.
fn naive_eval(path: &SamplePath, x: &[f64]) -> f64 {
    let hp = path.hyperparams();
    let b = path.basis();
    let d = x.len();
    let mut total = 0.0;
    for i in 0..b.num_features() {
        let mut arg = b.phases()[i];
        for k in 0..d {
            arg += b.frequencies()[i * d + k] * x[k] / hp.lengthscales[k];
        }
        total += path.weights()[i] * (2.0 * hp.output_scale / b.num_features() as f64).sqrt() * arg.cos();
    }
    for (xj, vj) in path.correction_inputs().zip(path.correction_coeffs()) {
        total += vj * kernel_eval(x, xj, hp).unwrap();
    }
    total
}

#[test]
fn single_feature_is_bounded_by_amp() {
    let h = hp(2, 0.3);
    let basis = draw_basis(&h, 1, 9).unwrap();
    for x in [[0.0, 0.0], [0.3, 0.9], [1.0, 0.5]] {
        assert!(basis.features(&x)[0].abs() <= basis.amp() + 1e-15);
    }
    assert!((basis.amp() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn basis_is_deterministic_per_seed() {
    let h = hp(3, 0.4);
    assert_eq!(draw_basis(&h, 64, 17).unwrap(), draw_basis(&h, 64, 17).unwrap());
    assert_ne!(draw_basis(&h, 64, 17).unwrap(), draw_basis(&h, 64, 18).unwrap());
    assert!(draw_basis(&h, 0, 1).is_err());
}

#[test]
fn prior_paths_reproduce_kernel_covariance() {
    // empirical covariance of prior paths at two points vs k(a, b)
    let h = GpHyperparams::new(vec![0.3, 0.5], 1.0, 1e-4).unwrap();
    let a = [0.2, 0.4];
    let b = [0.35, 0.5];
    let basis = Arc::new(draw_basis(&h, 4096, 5).unwrap());
    let model = GpModel::fit(Dataset::new(BoxDomain::unit(2)), h.clone()).unwrap();
    let n = 2000;
    let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
    for s in 0..n {
        let path = draw_path(&model, basis.clone(), 1000 + s).unwrap();
        let (fa, fb) = (path.value(&a), path.value(&b));
        saa += fa * fa;
        sab += fa * fb;
        sbb += fb * fb;
    }
    let k_ab = kernel_eval(&a, &b, &h).unwrap();
    assert!(
        ((sab / n as f64) - k_ab).abs() / k_ab <= 0.1,
        "cov {} vs {k_ab}",
        sab / n as f64
    );
    assert!(((saa / n as f64) - 1.0).abs() <= 0.1);
    assert!(((sbb / n as f64) - 1.0).abs() <= 0.1);
}

#[test]
fn empty_dataset_gives_prior_path() {
    let h = hp(1, 0.3);
    let model = GpModel::fit(Dataset::new(BoxDomain::unit(1)), h.clone()).unwrap();
    let basis = draw_basis(&h, 16, 1).unwrap();
    let w = vec![1.0; 16];
    assert!(matheron_coefficients(&model, &basis, &w, 3).unwrap().is_empty());
    let path = draw_path(&model, Arc::new(basis), 4).unwrap();
    assert!(path.correction_coeffs().is_empty());
}

#[test]
fn noiseless_matheron_interpolates() {
    let h = GpHyperparams::new(vec![0.25], 1.0, 1e-12).unwrap();
    let ds = Dataset::from_points(BoxDomain::unit(1), vec![vec![0.6]], vec![-0.7]).unwrap();
    let model = GpModel::fit(ds, h.clone()).unwrap();
    let basis = Arc::new(draw_basis(&h, 256, 2).unwrap());
    for s in 0..5 {
        let path = draw_path(&model, basis.clone(), s).unwrap();
        assert!((eval_path(&path, &[0.6]).unwrap() + 0.7).abs() < 1e-4);
    }
}

#[test]
fn matheron_mean_matches_posterior_mean() {
    let model = five_point_model(1e-3);
    let basis = Arc::new(draw_basis(model.hyperparams(), 1024, 77).unwrap());
    let x = [0.6];
    let n = 2000;
    let vals: Vec<f64> = (0..n)
        .map(|s| draw_path(&model, basis.clone(), 5000 + s).unwrap().value(&x))
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let target = model.predict(&x).unwrap().mean;
    assert!((mean - target).abs() <= 3.0 * se, "{mean} vs {target} (se {se})");
}

#[test]
fn eval_examples() {
    let h = hp(2, 0.5);
    let basis = Arc::new(draw_basis(&h, 8, 3).unwrap());
    let zero = SamplePath::prior(basis, vec![0.0; 8], h.clone()).unwrap();
    assert_eq!(eval_path(&zero, &[0.2, 0.1]).unwrap(), 0.0);
    assert_eq!(eval_path_grad(&zero, &[0.2, 0.1]).unwrap(), vec![0.0, 0.0]);

    let basis = Arc::new(FeatureBasis::from_parts(vec![1.3, -0.4], vec![0.7], &h).unwrap());
    let path = SamplePath::prior(basis.clone(), vec![0.9], h.clone()).unwrap();
    let expected = 0.9 * basis.amp() * 0.7f64.cos();
    assert!((eval_path(&path, &[0.0, 0.0]).unwrap() - expected).abs() < 1e-15);
    assert!(eval_path(&path, &[0.0]).is_err());
    assert!(eval_path_grad(&path, &[0.0, 0.0, 0.0]).is_err());
}

#[test]
fn gradient_vanishes_at_single_feature_minimum() {
    // w * amp * cos(omega * x / l + b) with w > 0 is minimal where the argument is pi
    let h = GpHyperparams::new(vec![0.5], 1.0, 1e-4).unwrap();
    let omega = 2.0;
    let b = 0.3;
    let basis = Arc::new(FeatureBasis::from_parts(vec![omega], vec![b], &h).unwrap());
    let path = SamplePath::prior(basis, vec![1.0], h).unwrap();
    let x_min = (std::f64::consts::PI - b) * 0.5 / omega;
    let g = eval_path_grad(&path, &[x_min]).unwrap();
    assert!(g[0].abs() <= 1e-8);
}

#[test]
fn eval_matches_naive_formula() {
    let model = five_point_model(1e-4);
    let basis = Arc::new(draw_basis(model.hyperparams(), 200, 8).unwrap());
    let path = draw_path(&model, basis, 21).unwrap();
    for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
        let v = eval_path(&path, &[x]).unwrap();
        let mut g = [0.0];
        let v2 = path.value_and_grad(&[x], &mut g);
        let naive = naive_eval(&path, &[x]);
        assert!((v - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
        assert!((v2 - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
    }
}

#[test]
fn paths_are_deterministic() {
    let model = five_point_model(1e-4);
    let basis = Arc::new(draw_basis(model.hyperparams(), 64, 8).unwrap());
    let a = draw_path(&model, basis.clone(), 3).unwrap();
    let b = draw_path(&model, basis, 3).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_eq!(a.correction_coeffs(), b.correction_coeffs());
    assert_eq!(a.value(&[0.33]).to_bits(), b.value(&[0.33]).to_bits());
}

#[test]
fn second_differences_respect_hessian_bound() {
    let model = five_point_model(1e-4);
    let basis = Arc::new(draw_basis(model.hyperparams(), 256, 4).unwrap());
    let path = draw_path(&model, basis, 1).unwrap();
    let bound = path.hessian_bound();
    let h = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let x = h + (1.0 - 2.0 * h) * rng.random::<f64>();
        let second = (path.value(&[x + h]) - 2.0 * path.value(&[x]) + path.value(&[x - h])) / (h * h);
        assert!(second.abs() <= bound * (1.0 + 1e-6) + 1e-6, "{second} > {bound}");
    }
}

#[test]
fn batched_trig_matches_libm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut xs: Vec<f64> = (0..20000).map(|_| (rng.random::<f64>() - 0.5) * 2000.0).collect();
    xs.extend((-40..40).map(|k| k as f64 * std::f64::consts::FRAC_PI_4));
    xs.extend([0.0, -0.0, 1e-300, 99999.0]);
    let mut cos = xs.clone();
    let mut sin = vec![0.0; xs.len()];
    super::sin_cos_in_place(&mut cos, &mut sin);
    for ((x, c), s) in xs.iter().zip(&cos).zip(&sin) {
        assert!((c - x.cos()).abs() <= 1e-15, "cos {x}");
        assert!((s - x.sin()).abs() <= 1e-15, "sin {x}");
    }
    let mut big = vec![1e7, 0.5];
    let mut s = vec![0.0; 2];
    super::sin_cos_in_place(&mut big, &mut s);
    assert_eq!(big[0], 1e7f64.cos());
}
