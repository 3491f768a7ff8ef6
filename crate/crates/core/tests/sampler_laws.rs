//! Law-level checks on the samplers: fixed points, agreement with exact
//! affine propagation, one-step local error order against a high-accuracy
//! flow integration, closed-form variance recursions, and determinism
//! across worker counts.

use nalgebra::{DMatrix, DVector};
use onsl_core::metrics::{empirical_gaussian_fit, kl_gaussian};
use onsl_core::oracle::{
    propagate_ei_sde_gaussian, propagate_pf_ode_gaussian, GaussianLaw, GaussianMixture,
    GaussianScore, MixtureScore, ScoreDomain, ScoreField,
};
use onsl_core::process::build_time_grid;
use onsl_core::sampler::{run_sampler, SamplerConfig, SamplerKind};
use std::sync::Arc;

/// Reference flow oracle: RK4 on the reverse probability-flow dynamics
/// `dx/dt = -x - s(t, x)`, integrated backward from `t_hi` to `t_lo` with
/// many small steps. Independent of the samplers' exponential-integrator
/// algebra.
fn rk4_reverse_flow(
    field: &dyn ScoreField,
    x0: &DVector<f64>,
    t_hi: f64,
    t_lo: f64,
    steps: usize,
) -> DVector<f64> {
    let drift = |t: f64, x: &DVector<f64>| -> DVector<f64> { -x - field.score(t, x) };
    let dt = (t_lo - t_hi) / steps as f64; // negative
    let mut x = x0.clone();
    let mut t = t_hi;
    for _ in 0..steps {
        let k1 = drift(t, &x);
        let k2 = drift(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
        let k3 = drift(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
        let k4 = drift(t + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t += dt;
    }
    x
}

/// The ODE half of a two-phase step, isolated for flow-error comparison.
fn ode_half(field: &dyn ScoreField, x: &DVector<f64>, t_k: f64, h_pair: f64) -> DVector<f64> {
    let em1 = h_pair.exp_m1();
    x * (em1 + 1.0) + field.score(t_k, x) * em1
}

fn bimodal() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![DVector::from_vec(vec![-2.0]), DVector::from_vec(vec![2.0])],
        vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
    )
    .unwrap()
}

#[test]
fn stationary_law_fixed_point_all_variants() {
    // exact standard-normal score: the output law stays N(0, I); the fitted
    // moment KL at a million samples must sit below 1e-3 nats. The grid is
    // fine enough (c = 0.05) that the EI-SDE baseline's order-c^2 stationary
    // variance drift also stays below the threshold.
    let grid = build_time_grid(0.1, 2.0, 0.05).unwrap();
    let score = Arc::new(GaussianScore::new(&GaussianLaw::standard(2)));
    let target = GaussianLaw::standard(2);
    for kind in [SamplerKind::OdeNoise, SamplerKind::EiSde, SamplerKind::PfOde] {
        let cfg =
            SamplerConfig::new(grid.clone(), score.clone(), 1_000_000, 7_070, kind).unwrap();
        let batch = run_sampler(&cfg);
        let fitted = empirical_gaussian_fit(&batch).unwrap();
        let kl = kl_gaussian(&fitted, &target).unwrap();
        assert!(kl < 1e-3, "{kind:?}: moment KL {kl}");
        for row in batch.rows().take(100) {
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn one_step_flow_error_is_second_order_for_mixture_scores() {
    // halving both steps must shrink the ODE-half flow error by about 4x
    let field = MixtureScore::x_space(bimodal());
    let t_k = 0.8;
    for x0 in [-2.4f64, -0.9, 0.3, 1.7] {
        let x = DVector::from_vec(vec![x0]);
        let mut errs = Vec::new();
        for h_pair in [0.12, 0.06] {
            let truth = rk4_reverse_flow(&field, &x, t_k, t_k - h_pair, 4_000);
            let step = ode_half(&field, &x, t_k, h_pair);
            errs.push((step - truth).norm());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.5..=4.5).contains(&ratio),
            "x0 = {x0}: errors {errs:?}, ratio {ratio}"
        );
    }
}

#[test]
fn one_step_flow_error_is_second_order_for_anisotropic_gaussian() {
    // non-unit variance, so the frozen score is genuinely wrong over a step
    let law = GaussianLaw::new(DVector::from_vec(vec![3.0]), DMatrix::from_element(1, 1, 4.0))
        .unwrap();
    let field = GaussianScore::new(&law);
    let t_k = 0.8;
    let x = DVector::from_vec(vec![1.2]);
    let mut errs = Vec::new();
    for h_pair in [0.2, 0.1] {
        let truth = rk4_reverse_flow(&field, &x, t_k, t_k - h_pair, 4_000);
        let step = ode_half(&field, &x, t_k, h_pair);
        errs.push((step - truth).norm());
    }
    let ratio = errs[0] / errs[1];
    assert!((3.5..=4.5).contains(&ratio), "errors {errs:?}, ratio {ratio}");
}

#[test]
fn unit_variance_gaussian_ode_half_is_exact() {
    // for N(mu, I) data the score is transported unchanged along the flow,
    // so the frozen-score step has no local error at all
    let law =
        GaussianLaw::new(DVector::from_vec(vec![3.0]), DMatrix::identity(1, 1)).unwrap();
    let field = GaussianScore::new(&law);
    let x = DVector::from_vec(vec![1.2]);
    let (t_k, h_pair) = (0.8, 0.2);
    let truth = rk4_reverse_flow(&field, &x, t_k, t_k - h_pair, 4_000);
    let step = ode_half(&field, &x, t_k, h_pair);
    assert!(
        (step - truth).norm() < 1e-15 + 1e-10,
        "unit-covariance case must be exact up to integrator error"
    );
}

#[test]
fn time_bookkeeping_reconstructs_grid() {
    // the ODE half of step k targets t_{k-2}; the noise half returns to
    // t_{k-1}; walking the indices must reproduce the grid times exactly
    let grid = build_time_grid(0.05, 3.0, 0.2).unwrap();
    let k_max = grid.iterations() + 1;
    let mut current = grid.time(k_max);
    for k in (2..=k_max).rev() {
        let ode_target = grid.time(k) - grid.step(k) - grid.step(k - 1);
        assert!((ode_target - grid.time(k - 2)).abs() < 1e-12);
        let after_noise = ode_target + grid.step(k - 1);
        assert!((after_noise - grid.time(k - 1)).abs() < 1e-12);
        current = after_noise;
    }
    assert!((current - grid.time(1)).abs() < 1e-12);
}

#[test]
fn zero_score_ei_sde_variance_matches_closed_recursion() {
    struct ZeroScore;
    impl ScoreField for ZeroScore {
        fn dim(&self) -> usize {
            1
        }
        fn domain(&self) -> ScoreDomain {
            ScoreDomain::XSpace
        }
        fn score(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn label(&self) -> String {
            "zero".into()
        }
    }
    let grid = build_time_grid(0.1, 2.0, 0.2).unwrap();
    let cfg = SamplerConfig::new(
        grid.clone(),
        Arc::new(ZeroScore),
        400_000,
        31,
        SamplerKind::EiSde,
    )
    .unwrap();
    let batch = run_sampler(&cfg);
    let fitted = empirical_gaussian_fit(&batch).unwrap();
    // v -> e^{2h}(v + 1) - 1 per step, i.e. v_1 = 2 e^{2(T - t_1)} - 1
    let expect = 2.0 * (2.0 * (grid.horizon() - grid.time(1))).exp() - 1.0;
    let se = expect * (2.0 / 400_000f64).sqrt();
    assert!(
        (fitted.cov()[(0, 0)] - expect).abs() < 4.0 * se,
        "variance {} vs {}",
        fitted.cov()[(0, 0)],
        expect
    );
}

#[test]
fn pf_ode_matches_affine_propagation() {
    let law = GaussianLaw::new(
        DVector::from_vec(vec![2.0, -1.0]),
        DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.7]),
    )
    .unwrap();
    let grid = build_time_grid(0.05, 4.0, 0.25).unwrap();
    let score = Arc::new(GaussianScore::new(&law));
    let predicted = propagate_pf_ode_gaussian(&grid, score.as_ref()).unwrap();
    let n = 200_000;
    let cfg = SamplerConfig::new(grid, score, n, 5_555, SamplerKind::PfOde).unwrap();
    let fitted = empirical_gaussian_fit(&run_sampler(&cfg)).unwrap();
    for a in 0..2 {
        let se = (predicted.cov()[(a, a)] / n as f64).sqrt();
        assert!((fitted.mean()[a] - predicted.mean()[a]).abs() < 4.0 * se);
        for b in 0..2 {
            let c_se = ((predicted.cov()[(a, a)] * predicted.cov()[(b, b)]
                + predicted.cov()[(a, b)].powi(2))
                / n as f64)
                .sqrt();
            assert!((fitted.cov()[(a, b)] - predicted.cov()[(a, b)]).abs() < 4.0 * c_se);
        }
    }
}

#[test]
fn ei_sde_matches_affine_propagation() {
    let law = GaussianLaw::new(
        DVector::from_vec(vec![0.5]),
        DMatrix::from_element(1, 1, 2.5),
    )
    .unwrap();
    let grid = build_time_grid(0.05, 4.0, 0.25).unwrap();
    let score = Arc::new(GaussianScore::new(&law));
    let predicted = propagate_ei_sde_gaussian(&grid, score.as_ref()).unwrap();
    let n = 200_000;
    let cfg = SamplerConfig::new(grid, score, n, 6_161, SamplerKind::EiSde).unwrap();
    let fitted = empirical_gaussian_fit(&run_sampler(&cfg)).unwrap();
    let se_m = (predicted.cov()[(0, 0)] / n as f64).sqrt();
    assert!((fitted.mean()[0] - predicted.mean()[0]).abs() < 4.0 * se_m);
    let se_v = predicted.cov()[(0, 0)] * (2.0 / n as f64).sqrt();
    assert!((fitted.cov()[(0, 0)] - predicted.cov()[(0, 0)]).abs() < 4.0 * se_v);
}

#[test]
fn batches_are_identical_across_worker_counts() {
    let make = || {
        let grid = build_time_grid(0.05, 3.0, 0.2).unwrap();
        let score = Arc::new(GaussianScore::new(&GaussianLaw::standard(3)));
        SamplerConfig::new(grid, score, 4_096, 12_345, SamplerKind::OdeNoise).unwrap()
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_sampler(&make()));
    let eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(|| run_sampler(&make()));
    assert_eq!(single.as_slice(), eight.as_slice());
    assert_eq!(single.provenance(), eight.provenance());
}
