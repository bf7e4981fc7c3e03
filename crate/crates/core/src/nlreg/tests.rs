use super::*;
use crate::moment::sqrt_spaced_sizes;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn synthetic(h: f64, sigma_phi: f64, noise: f64, seed: u64) -> VarianceObservations {
    let n: Vec<f64> = sqrt_spaced_sizes(50, 10, 200)
        .into_iter()
        .map(|v| v as f64)
        .collect();
    let mut r = rng::stream(seed);
    let y = n
        .iter()
        .map(|&n| sigma_phi * n / (n + h) + noise * r.sample::<f64, _>(StandardNormal))
        .collect();
    VarianceObservations { n, y, sigma_phi }
}

fn fixed_posterior(h: Vec<f64>, sigma_phi: f64) -> NlregPosterior {
    let k = h.len();
    NlregPosterior {
        sigma_eps: vec![1.0; k],
        h,
        chains: 1,
        draws_per_chain: k,
        acceptance: vec![0.0],
        rhat_h: 1.0,
        rhat_sigma: 1.0,
        sigma_phi,
        hyper: Hyperparameters {
            h_mean: 1.0,
            h_variance: 1.0,
            sigma_location: 1.0,
            sigma_scale: 1.0,
            sigma_df: 1.0,
        },
        degenerate: false,
        warnings: vec![],
    }
}

#[test]
fn noiseless_curve_recovers_h() {
    let obs = synthetic(20.0, 5.0, 0.0, 0);
    let post =
        fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 1).unwrap();
    assert!(
        (post.median_h() / 20.0 - 1.0).abs() < 0.1,
        "{}",
        post.median_h()
    );
    let res = residual_diagnostics(&post, &obs).unwrap();
    assert_eq!(res.len(), 50);
    assert!(res.iter().all(|r| r.residual.abs() < 1e-3 * 5.0));
}

#[test]
fn noisy_curve_is_well_mixed() {
    let obs = synthetic(20.0, 5.0, 0.1, 3);
    let post =
        fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 4).unwrap();
    assert_eq!(post.h.len(), 4 * 3000);
    assert!(post.h.iter().chain(&post.sigma_eps).all(|&v| v > 0.0));
    assert!(post.rhat_h < RHAT_WARNING && post.rhat_sigma < RHAT_WARNING);
    assert!(post.warnings.is_empty(), "{:?}", post.warnings);
    assert!(
        post.acceptance.iter().all(|&a| a > 0.1 && a < 0.7),
        "{:?}",
        post.acceptance
    );
    let q = stats::quantiles(&post.h, &[0.025, 0.975]);
    assert!(q[0] < 20.0 && 20.0 < q[1], "{q:?}");
    let res = residual_diagnostics(&post, &obs).unwrap();
    let mean = res.iter().map(|r| r.residual).sum::<f64>() / 50.0;
    assert!(mean.abs() < 2.0 * post.median_sigma_eps() / 50f64.sqrt());
}

#[test]
fn saturated_observations_push_h_to_zero() {
    let n: Vec<f64> = sqrt_spaced_sizes(50, 10, 200)
        .into_iter()
        .map(|v| v as f64)
        .collect();
    let obs = VarianceObservations {
        y: vec![3.0; n.len()],
        n,
        sigma_phi: 3.0,
    };
    let post =
        fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 2).unwrap();
    assert!(post.degenerate);
    assert!(!post.warnings.is_empty());
    assert!(post.median_h() < 1e-3, "{}", post.median_h());
    let s = predict_sigma_x_quantiles(&post, 3.0, 10.0, &[0.5]).unwrap()[0];
    assert!((s - 3.0).abs() < 1e-3);
}

#[test]
fn fits_are_reproducible() {
    let obs = synthetic(50.0, 1.0, 0.02, 9);
    let a = fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 5).unwrap();
    let b = fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regression_input_errors() {
    let mut obs = synthetic(20.0, 1.0, 0.0, 0);
    obs.n.truncate(2);
    obs.y.truncate(2);
    assert!(fit_variance_curve(&obs, &PriorConfig::default(), &McmcConfig::default(), 0).is_err());
    let mut zero = synthetic(20.0, 1.0, 0.0, 0);
    zero.sigma_phi = 0.0;
    assert!(fit_variance_curve(&zero, &PriorConfig::default(), &McmcConfig::default(), 0).is_err());
}

#[test]
fn prediction_examples() {
    let zero = fixed_posterior(vec![0.0; 10], 2.0);
    assert!(predict_sigma_x_quantiles(&zero, 2.0, 7.0, &DEFAULT_LEVELS)
        .unwrap()
        .iter()
        .all(|&v| v == 2.0));
    let at_n = fixed_posterior(vec![30.0; 10], 2.0);
    assert_eq!(
        predict_sigma_x_quantiles(&at_n, 2.0, 30.0, &[0.5]).unwrap()[0],
        1.0
    );
    assert_eq!(
        predict_sigma_x_quantiles(&at_n, 2.0, f64::INFINITY, &[0.5]).unwrap()[0],
        2.0
    );
    assert_eq!(
        predict_sigma_x_quantiles(&at_n, 2.0, 0.0, &[0.5]).unwrap()[0],
        0.0
    );
    let big = predict_sigma_x_quantiles(&at_n, 2.0, 1e12, &[0.5]).unwrap()[0];
    assert!(big < 2.0 && big > 2.0 - 1e-9);
    assert!(predict_sigma_x_quantiles(&fixed_posterior(vec![], 1.0), 1.0, 1.0, &[0.5]).is_err());
    assert!(predict_sigma_x_quantiles(&at_n, 2.0, 1.0, &[1.5]).is_err());
}

#[test]
fn predictions_are_monotone_and_below_the_asymptote() {
    let post = fixed_posterior((1..200).map(|i| i as f64 * 0.37).collect(), 4.0);
    let mut last = vec![0.0; 5];
    for n in 1..500 {
        let q = predict_sigma_x_quantiles(&post, 4.0, n as f64, &DEFAULT_LEVELS).unwrap();
        for l in 0..5 {
            assert!(q[l] >= last[l] && q[l] < 4.0);
            if l > 0 {
                assert!(q[l] >= q[l - 1]);
            }
        }
        last = q;
    }
}

fn normal_cond(n: usize, shift: f64, seed: u64) -> ConditionalInb {
    let mut r = rng::stream(seed);
    ConditionalInb::from_fitted(DMatrix::from_fn(n, 1, |_, _| {
        shift + r.sample::<f64, _>(StandardNormal)
    }))
    .unwrap()
}

#[test]
fn curve_is_monotone_and_bounded() {
    let post = fixed_posterior((1..400).map(|i| i as f64 * 0.2).collect(), 1.0);
    let grid: Vec<f64> = (1..=200).map(f64::from).collect();
    for shift in [-0.3, 0.0, 0.8] {
        let c = normal_cond(4000, shift, 1);
        let curve = evsi_curve(&post, &c, &grid, &DEFAULT_LEVELS).unwrap();
        for l in 0..5 {
            assert!(curve.evsi[l].windows(2).all(|w| w[0] <= w[1]));
            assert!(curve.evsi[l]
                .iter()
                .all(|&e| e >= 0.0 && e <= curve.evppi + 1e-9));
        }
        for i in 0..grid.len() {
            for l in 1..5 {
                assert!(curve.evsi[l][i] >= curve.evsi[l - 1][i]);
            }
        }
        assert!((curve.evppi - crate::conditional::evppi(&c)).abs() < 1e-12);
        assert_eq!(curve.evsi_at(0.5, 10.0), Some(curve.evsi[2][9]));
    }
}

#[test]
fn flat_conditional_inb_has_no_value() {
    let post = fixed_posterior(vec![5.0; 20], 1.0);
    let c = ConditionalInb::from_fitted(DMatrix::from_element(100, 1, 0.3)).unwrap();
    let curve = evsi_curve(&post, &c, &[1.0, 10.0, 100.0], &DEFAULT_LEVELS).unwrap();
    assert!(curve.evsi.iter().flatten().all(|&e| e == 0.0));
    assert!(evsi_curve(&post, &c, &[], &DEFAULT_LEVELS).is_err());
}

fn point(q: usize, n: usize, sigma: DMatrix<f64>) -> PosteriorVariancePoint {
    PosteriorVariancePoint {
        q,
        n,
        sigma,
        seed: 0,
    }
}

#[test]
fn surface_reduces_to_a_single_curve() {
    let obs = synthetic(20.0, 2.0, 0.05, 8);
    let prior_var = 3.0;
    let points: Vec<_> = obs
        .n
        .iter()
        .zip(&obs.y)
        .enumerate()
        .map(|(q, (&n, &y))| point(q, n as usize, DMatrix::from_element(1, 1, prior_var - y)))
        .collect();
    let moments = InbMoments {
        mean: DVector::zeros(1),
        covariance: DMatrix::from_element(1, 1, prior_var),
    };
    let sigma_phi = DMatrix::from_element(1, 1, 2.0);
    let surface = fit_variance_surface_multi(
        &points,
        &moments,
        &sigma_phi,
        &PriorConfig::default(),
        &McmcConfig::default(),
        6,
    )
    .unwrap();
    assert_eq!(surface.regressions(), 1);
    let rebuilt = VarianceObservations::from_points(&points, prior_var, 2.0, (0, 0)).unwrap();
    let single =
        fit_variance_curve(&rebuilt, &PriorConfig::default(), &McmcConfig::default(), 6).unwrap();
    assert_eq!(surface.element(0, 0), Some(&single));
}

#[test]
fn surface_fits_every_unique_element() {
    let n: Vec<usize> = sqrt_spaced_sizes(20, 5, 100);
    let sigma_phi = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let prior = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    let points: Vec<_> = n
        .iter()
        .enumerate()
        .map(|(q, &n)| {
            let r = n as f64 / (n as f64 + 15.0);
            point(q, n, &prior - &sigma_phi * r)
        })
        .collect();
    let moments = InbMoments {
        mean: DVector::zeros(2),
        covariance: prior,
    };
    let mcmc = McmcConfig {
        draws: 500,
        burn_in: 500,
        ..McmcConfig::default()
    };
    let surface = fit_variance_surface_multi(
        &points,
        &moments,
        &sigma_phi,
        &PriorConfig::default(),
        &mcmc,
        1,
    )
    .unwrap();
    assert_eq!(surface.regressions(), 3);
    assert_eq!(surface.element(1, 0), surface.element(0, 1));
    let m = surface.sigma_x(15.0, 0.5).unwrap();
    assert_eq!(m[(0, 1)], m[(1, 0)]);
    assert!((m - &sigma_phi * 0.5).abs().max() < 0.01);

    let short = vec![point(0, 5, DMatrix::identity(1, 1))];
    assert!(fit_variance_surface_multi(
        &short,
        &moments,
        &sigma_phi,
        &PriorConfig::default(),
        &mcmc,
        1
    )
    .is_err());
}
