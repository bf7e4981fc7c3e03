//! EVPPI from the regression smoother against a two-level Monte Carlo
//! estimate that samples θ | φ from the conditional normal directly.

use evsi::conditional::{evppi, fit_conditional_inb, SmootherConfig};
use evsi::model::{bk_exercise, net_benefit, sample_prior, ModelSpec};
use evsi::psa::compute_inb;
use nalgebra::{Cholesky, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

/// Nested estimate: outer φ from its marginal, inner θ from θ | φ.
fn nested_evppi(
    spec: &ModelSpec,
    focal: &[usize],
    outer: usize,
    inner: usize,
    seed: u64,
) -> (f64, f64) {
    let p = spec.prior.dim();
    let m = spec.prior.mean().clone();
    let s = spec.prior.covariance().clone();
    let rest: Vec<usize> = (0..p).filter(|i| !focal.contains(i)).collect();
    let s_ff = s.select_rows(focal).select_columns(focal);
    let s_rf = s.select_rows(&rest).select_columns(focal);
    let s_rr = s.select_rows(&rest).select_columns(&rest);
    let chol_ff = Cholesky::new(s_ff.clone()).unwrap();
    let gain = chol_ff.solve(&s_rf.transpose()).transpose();
    let cond_cov = &s_rr - &gain * s_rf.transpose();
    let l_cond = Cholesky::new(cond_cov).unwrap().l();
    let l_ff = chol_ff.l();
    let m_f = DVector::from_fn(focal.len(), |i, _| m[focal[i]]);
    let m_r = DVector::from_fn(rest.len(), |i, _| m[rest[i]]);

    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; p];
    let mut nb = vec![0.0; 2];
    let mut conditional = Vec::with_capacity(outer);
    for _ in 0..outer {
        let phi = &m_f + &l_ff * normal_vec(&mut r, focal.len());
        let centre = &m_r + &gain * (&phi - &m_f);
        let mut sum = 0.0;
        for _ in 0..inner {
            let x = &centre + &l_cond * normal_vec(&mut r, rest.len());
            for (i, &f) in focal.iter().enumerate() {
                theta[f] = phi[i];
            }
            for (i, &k) in rest.iter().enumerate() {
                theta[k] = x[i];
            }
            spec.evaluate(&theta, &mut nb);
            sum += nb[1] - nb[0];
        }
        conditional.push(sum / inner as f64);
    }
    let n = outer as f64;
    let gains: Vec<f64> = conditional.iter().map(|v| v.max(0.0)).collect();
    let mean_gain = gains.iter().sum::<f64>() / n;
    let mean_inb = conditional.iter().sum::<f64>() / n;
    let sd = (gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean_gain - mean_inb.max(0.0), sd / n.sqrt())
}

#[test]
fn bk_exercise_one_evppi_matches_nested_oracle() {
    let spec = ModelSpec::builtin("bk").unwrap();
    let study = bk_exercise(1, 0).unwrap();
    let draws = sample_prior(&spec, 100_000, 11).unwrap();
    let inb = compute_inb(&net_benefit(&draws, &spec).unwrap(), 0).unwrap();
    let phi = draws.select_columns(&study.focal_parameters);
    let fit = fit_conditional_inb(&inb, &phi, &SmootherConfig::default()).unwrap();
    let estimate = evppi(&fit);

    let (oracle, se) = nested_evppi(&spec, &study.focal_parameters, 1000, 10_000, 12);
    eprintln!("EVPPI smoother {estimate:.2}, oracle {oracle:.2} ± {se:.2}");
    assert!((estimate - oracle).abs() < 3.0 * se);
}

#[test]
fn nested_oracle_sanity_on_a_single_focal_parameter() {
    // φ = θ of the toy model: E[INB | φ] = φ, so EVPPI = E[max(0, θ)] = 1/√(2π).
    let spec = ModelSpec::builtin("normal-toy").unwrap();
    let (value, se) = nested_evppi(&spec, &[0], 4000, 10, 5);
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!(
        (value - exact).abs() < 3.0 * se + 1e-3,
        "{value} vs {exact}"
    );
}
