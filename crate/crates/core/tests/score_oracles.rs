//! Independent-oracle checks for the score fields: central finite
//! differences of the exact log-density, the z/x rescaling identity, the
//! posterior-form equivalence for finite supports, perturbation
//! calibration, and exact law propagation against sampled moments.

use nalgebra::{DMatrix, DVector};
use onsl_core::oracle::{
    gaussian_forward_law, measure_score_error, mixture_marginal, perturb_score,
    posterior_score_discrete, propagate_ode_noise_gaussian, DataDistribution, DiscreteSupport,
    GaussianLaw, GaussianMixture, GaussianScore, MixtureScore, PerturbMode, PreparedMixture,
    RescaledScore, ScoreField,
};
use onsl_core::process::build_time_grid;
use onsl_core::rng::{standard_normal_vector, stream};
use onsl_core::sampler::{run_sampler, SamplerConfig, SamplerKind};
use std::sync::Arc;

fn test_mixture_2d() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.3, 0.7],
        vec![
            DVector::from_vec(vec![-1.0, 0.5]),
            DVector::from_vec(vec![2.0, -0.5]),
        ],
        vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 1.5]),
        ],
    )
    .unwrap()
}

fn bimodal_1d() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![DVector::from_vec(vec![-2.0]), DVector::from_vec(vec![2.0])],
        vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
    )
    .unwrap()
}

fn random_points(d: usize, n: usize, spread: f64, seed: u64) -> Vec<DVector<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64, 0, 99);
            standard_normal_vector(&mut rng, d) * spread
        })
        .collect()
}

#[test]
fn score_matches_log_density_finite_differences() {
    // central differences of the exact log-density at 100 random points
    let field = MixtureScore::x_space(test_mixture_2d());
    let t = 0.4;
    let prepared = field.prepared(t);
    let h = 1e-5;
    for x in random_points(2, 100, 2.5, 11) {
        let s = prepared.score(&x);
        for a in 0..2 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[a] += h;
            lo[a] -= h;
            let fd = (prepared.log_density(&hi) - prepared.log_density(&lo)) / (2.0 * h);
            let rel = (fd - s[a]).abs() / s[a].abs().max(1e-3);
            assert!(rel < 1e-6, "coordinate {a}: fd {fd} vs score {}", s[a]);
        }
    }
}

#[test]
fn jacobian_matches_score_finite_differences() {
    let field = MixtureScore::x_space(test_mixture_2d());
    let t = 0.6;
    let prepared = field.prepared(t);
    let h = 2e-5;
    for x in random_points(2, 40, 2.0, 12) {
        let jac = prepared.score_jacobian(&x);
        for b in 0..2 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[b] += h;
            lo[b] -= h;
            let fd = (prepared.score(&hi) - prepared.score(&lo)) / (2.0 * h);
            for a in 0..2 {
                let rel = (fd[a] - jac[(a, b)]).abs() / jac[(a, b)].abs().max(1e-2);
                assert!(rel < 1e-5, "entry ({a},{b}): fd {} vs {}", fd[a], jac[(a, b)]);
            }
        }
    }
}

#[test]
fn jacobian_is_symmetric_on_random_points() {
    let field = MixtureScore::x_space(test_mixture_2d());
    for (i, x) in random_points(2, 50, 3.0, 13).iter().enumerate() {
        let t = 0.1 + 0.07 * (i % 7) as f64;
        let jac = field.jacobian(t, x).unwrap();
        let asym = (&jac - jac.transpose()).norm() / jac.norm();
        assert!(asym < 1e-8, "asymmetry {asym} at point {i}");
    }
}

#[test]
fn laplacian_matches_second_differences_on_bimodal() {
    let field = MixtureScore::x_space(bimodal_1d());
    let t = 0.5;
    let prepared = field.prepared(t);
    let h = 5e-4;
    for x in random_points(1, 30, 2.5, 14) {
        let lap = prepared.score_laplacian(&x);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[0] += h;
        lo[0] -= h;
        let fd =
            (prepared.score(&hi)[0] - 2.0 * prepared.score(&x)[0] + prepared.score(&lo)[0])
                / (h * h);
        let rel = (fd - lap[0]).abs() / lap[0].abs().max(1e-2);
        assert!(rel < 1e-3, "fd {fd} vs laplacian {}", lap[0]);
    }
}

#[test]
fn rescaled_field_agrees_with_direct_z_space_field() {
    // s_r(t, z) = e^{-t} s(t, e^{-t} z): the rescaling wrapper around the
    // x-space field must match the natively built z-space field
    let mix = test_mixture_2d();
    let wrapped = RescaledScore::new(MixtureScore::x_space(mix.clone()));
    let direct = MixtureScore::z_space(mix);
    for (i, z) in random_points(2, 60, 3.0, 15).iter().enumerate() {
        let t = 0.1 + 0.1 * (i % 10) as f64;
        let a = wrapped.score(t, z);
        let b = direct.score(t, z);
        let rel = (&a - &b).norm() / b.norm().max(1e-12);
        assert!(rel < 1e-10, "t={t}: {a:?} vs {b:?}");
    }
}

#[test]
fn posterior_score_equals_mixture_limit() {
    // atoms as the limit of shrinking Gaussian components, compared in
    // z-space at matched times
    let atoms = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-2.0])];
    let weights = vec![0.4, 0.6];
    let data = DiscreteSupport::new(weights.clone(), atoms.clone()).unwrap();
    let eps = 1e-9;
    let near_degenerate = GaussianMixture::new(
        weights,
        atoms,
        vec![
            DMatrix::from_element(1, 1, eps),
            DMatrix::from_element(1, 1, eps),
        ],
    )
    .unwrap();
    let mix_field = MixtureScore::z_space(near_degenerate);
    let t = 0.7;
    for z in random_points(1, 25, 3.0, 16) {
        let a = posterior_score_discrete(&data, t, &z).unwrap();
        let b = mix_field.score(t, &z);
        let rel = (a[0] - b[0]).abs() / b[0].abs().max(1e-9);
        assert!(rel < 1e-6, "{} vs {}", a[0], b[0]);
    }
}

#[test]
fn posterior_score_matches_direct_mixture_differentiation() {
    // the same atom law seen as a z-space mixture with covariance
    // (e^{2t}-1) I, differentiated by the generic mixture machinery
    let atoms = vec![
        DVector::from_vec(vec![0.5, 1.0]),
        DVector::from_vec(vec![-1.0, 0.0]),
        DVector::from_vec(vec![2.0, -1.0]),
    ];
    let weights = vec![0.25, 0.5, 0.25];
    let data = DiscreteSupport::new(weights.clone(), atoms.clone()).unwrap();
    let t = 0.45;
    let v = (2.0 * t as f64).exp_m1();
    let as_mixture = GaussianMixture::new(
        weights,
        atoms,
        vec![DMatrix::identity(2, 2) * v; 3],
    )
    .unwrap();
    let prepared = PreparedMixture::new(&as_mixture).unwrap();
    for z in random_points(2, 40, 2.0, 17) {
        let a = posterior_score_discrete(&data, t, &z).unwrap();
        let b = prepared.score(&z);
        let rel = (&a - &b).norm() / b.norm().max(1e-12);
        assert!(rel < 1e-8, "{a:?} vs {b:?}");
    }
}

#[test]
fn forward_sample_rescales_to_pure_diffusion_form() {
    // rescale_to_z(forward_sample(y, t, eps), t) = y + sqrt(e^{2t}-1) eps
    use onsl_core::process::{forward_sample, rescale_to_z};
    let mut rng = stream(21, 0, 0, 1);
    for i in 0..50 {
        let t = 0.05 + 0.1 * (i % 12) as f64;
        let y = standard_normal_vector(&mut rng, 3) * 2.0;
        let eps = standard_normal_vector(&mut rng, 3);
        let x = forward_sample(&y, t, &eps).unwrap();
        let z = rescale_to_z(&x, t);
        let expect = &y + &eps * (2.0 * t).exp_m1().sqrt();
        let rel = (&z - &expect).norm() / expect.norm().max(1e-12);
        assert!(rel < 1e-12, "i={i}: rel {rel}");
    }
}

#[test]
fn measured_error_of_constant_bias_matches_closed_form() {
    // weighted error of a fixed bias b over the grid is |b|^2 (T - delta)/T
    let grid = build_time_grid(0.05, 3.0, 0.25).unwrap();
    let mix = test_mixture_2d();
    let data = DataDistribution::Mixture(mix.clone());
    let exact = MixtureScore::x_space(mix.clone());
    let eps = 0.2;
    let hat = perturb_score(
        MixtureScore::x_space(mix),
        PerturbMode::ConstantBias,
        eps,
        &grid,
        &data,
        5,
    )
    .unwrap();
    let est = measure_score_error(&grid, &exact, &hat, &data, 2000, 31).unwrap();
    assert!(
        (est.weighted_mse - eps * eps).abs() <= 3.0 * est.std_error.max(1e-12),
        "measured {} target {} se {}",
        est.weighted_mse,
        eps * eps,
        est.std_error
    );
}

#[test]
fn relative_scaling_error_on_standard_normal() {
    // s = -x under N(0, I): error gamma^2 d (T - delta)/T
    let grid = build_time_grid(0.05, 3.0, 0.25).unwrap();
    let d = 3;
    let mix = GaussianMixture::standard_normal(d);
    let data = DataDistribution::Mixture(mix.clone());
    let exact = MixtureScore::x_space(mix.clone());
    let gamma = 0.1;
    // build the scaled field directly with a known gamma by asking for the
    // eps that the closed form predicts
    let span = grid.horizon() - grid.delta();
    let eps = gamma * (d as f64 * span / grid.horizon()).sqrt();
    let hat = perturb_score(
        MixtureScore::x_space(mix),
        PerturbMode::RelativeScaling,
        eps,
        &grid,
        &data,
        6,
    )
    .unwrap();
    let est = measure_score_error(&grid, &exact, &hat, &data, 4000, 32).unwrap();
    let target = gamma * gamma * d as f64 * span / grid.horizon();
    let rel = (est.weighted_mse - target).abs() / target;
    assert!(rel < 0.1, "measured {} vs {target}", est.weighted_mse);
}

#[test]
fn exact_law_matches_sampled_moments_on_reference_config() {
    // N(3, 1) in 1D, K = 50 grid, a million samples
    let law = GaussianLaw::new(DVector::from_vec(vec![3.0]), DMatrix::identity(1, 1)).unwrap();
    let solved = onsl_core::process::grid_from_iterations(0.01, 10.0, 50).unwrap();
    let score = Arc::new(GaussianScore::new(&law));
    let predicted = propagate_ode_noise_gaussian(&solved.grid, score.as_ref()).unwrap();
    let config = SamplerConfig::new(
        solved.grid.clone(),
        score,
        1_000_000,
        424_242,
        SamplerKind::OdeNoise,
    )
    .unwrap();
    let batch = run_sampler(&config);
    let fitted = onsl_core::metrics::empirical_gaussian_fit(&batch).unwrap();
    let n = batch.n_samples() as f64;
    let mean_se = (predicted.cov()[(0, 0)] / n).sqrt();
    assert!(
        (fitted.mean()[0] - predicted.mean()[0]).abs() < 4.0 * mean_se,
        "mean {} vs {} (se {mean_se})",
        fitted.mean()[0],
        predicted.mean()[0]
    );
    let var_se = predicted.cov()[(0, 0)] * (2.0 / n).sqrt();
    assert!(
        (fitted.cov()[(0, 0)] - predicted.cov()[(0, 0)]).abs() < 4.0 * var_se,
        "var {} vs {}",
        fitted.cov()[(0, 0)],
        predicted.cov()[(0, 0)]
    );
    // and the predicted law is indistinguishable from the true marginal here
    let truth = gaussian_forward_law(&law, solved.grid.time(1));
    assert!((predicted.mean()[0] - truth.mean()[0]).abs() < 1e-6);
}

#[test]
fn exact_law_matches_sampled_moments_across_dimensions() {
    // five random anisotropic Gaussian configurations in d in {1, 2, 8}
    for (case, &d) in [1usize, 2, 8, 2, 1].iter().enumerate() {
        let seed = 1000 + case as u64;
        let mut rng = stream(seed, 0, 0, 3);
        let mean = standard_normal_vector(&mut rng, d) * 2.0;
        let entries = standard_normal_vector(&mut rng, d * d);
        let a = DMatrix::<f64>::from_fn(d, d, |i, j| entries[i * d + j]);
        let cov = &a * a.transpose() + DMatrix::<f64>::identity(d, d) * 0.5;
        let law = GaussianLaw::new(mean, cov).unwrap();
        let grid = build_time_grid(0.05, 4.0, 0.3).unwrap();
        let score = Arc::new(GaussianScore::new(&law));
        let predicted = propagate_ode_noise_gaussian(&grid, score.as_ref()).unwrap();
        let n = 100_000usize;
        let config =
            SamplerConfig::new(grid, score, n, seed, SamplerKind::OdeNoise).unwrap();
        let batch = run_sampler(&config);
        let fitted = onsl_core::metrics::empirical_gaussian_fit(&batch).unwrap();
        let nf = n as f64;
        for a in 0..d {
            let se = (predicted.cov()[(a, a)] / nf).sqrt();
            assert!(
                (fitted.mean()[a] - predicted.mean()[a]).abs() < 4.0 * se,
                "case {case} mean[{a}]"
            );
            for b in 0..d {
                let c_se = ((predicted.cov()[(a, a)] * predicted.cov()[(b, b)]
                    + predicted.cov()[(a, b)].powi(2))
                    / nf)
                    .sqrt();
                assert!(
                    (fitted.cov()[(a, b)] - predicted.cov()[(a, b)]).abs() < 4.0 * c_se,
                    "case {case} cov[{a},{b}]: {} vs {}",
                    fitted.cov()[(a, b)],
                    predicted.cov()[(a, b)]
                );
            }
        }
    }
}

#[test]
fn mixture_and_forward_marginal_commute_with_sampling() {
    // sampling y ~ p_data then noising must distribute as mixture_marginal:
    // checked through first and second moments in 1D
    let mix = bimodal_1d();
    let t = 0.8;
    let marginal = mixture_marginal(&mix, t);
    let expect_mean: f64 = marginal
        .weights()
        .iter()
        .zip(marginal.means())
        .map(|(w, m)| w * m[0])
        .sum();
    let expect_m2: f64 = marginal
        .weights()
        .iter()
        .zip(marginal.means().iter().zip(marginal.covariances()))
        .map(|(w, (m, c))| w * (m[0] * m[0] + c[(0, 0)]))
        .sum();
    let n = 200_000;
    let cf = onsl_core::process::forward_coeffs(t);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for i in 0..n {
        let mut rng = stream(77, i as u64, 0, 5);
        let y = mix.sample(&mut rng);
        let eps = standard_normal_vector(&mut rng, 1);
        let x = y[0] * cf.scale + eps[0] * cf.noise_std;
        sum += x;
        sum2 += x * x;
    }
    let mean = sum / n as f64;
    let m2 = sum2 / n as f64;
    assert!((mean - expect_mean).abs() < 4.0 * (expect_m2 / n as f64).sqrt());
    assert!((m2 - expect_m2).abs() < 4.0 * expect_m2 * (3.0 / n as f64).sqrt());
}
