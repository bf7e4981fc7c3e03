//! Reference EVSI estimators: nested Monte Carlo for any built-in model and
//! the closed form for the normal toy model.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, MultivariateNormal, StudyDesign};
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate {
    pub evsi: f64,
    /// Naive standard error of the outer max terms.
    pub se: f64,
    pub outer: usize,
    pub inner: usize,
    /// S_out·(M_in + 1): one net-benefit evaluation at every outer θ plus
    /// the inner posterior draws.
    pub model_evaluations: usize,
    /// Mean INB at the outer draws, per comparator arm.
    pub outer_mean_inb: Vec<f64>,
}

struct OuterResult {
    posterior_mean: Vec<f64>,
    theta_inb: Vec<f64>,
}

/// EVSI of `study` by nested simulation: θ and X from the prior predictive,
/// then `inner` posterior draws per dataset, drawn as antithetic pairs.
pub fn nested_mc_evsi(
    spec: &ModelSpec,
    study: &StudyDesign,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if outer < 2 || inner < 2 {
        return Err(Error::invalid(format!(
            "oracle needs at least 2 outer and 2 inner draws, got {outer} and {inner}"
        )));
    }
    study.validate(spec)?;
    let k = spec.arm_count - 1;
    let results = (0..outer)
        .into_par_iter()
        .map(|s| outer_draw(spec, study, inner, seed, s))
        .collect::<Result<Vec<_>>>()?;

    let gains: Vec<f64> = results
        .iter()
        .map(|r| r.posterior_mean.iter().fold(0.0_f64, |a, &b| a.max(b)))
        .collect();
    // The baseline uses the same datasets: the average posterior mean is
    // an unbiased estimate of the prior mean.
    let baseline = (0..k)
        .map(|c| results.iter().map(|r| r.posterior_mean[c]).sum::<f64>() / outer as f64)
        .fold(0.0_f64, f64::max);
    let outer_mean_inb = (0..k)
        .map(|c| results.iter().map(|r| r.theta_inb[c]).sum::<f64>() / outer as f64)
        .collect();
    Ok(OracleEstimate {
        evsi: stats::mean(&gains) - baseline,
        se: stats::std_dev(&gains) / (outer as f64).sqrt(),
        outer,
        inner,
        model_evaluations: outer * (inner + 1),
        outer_mean_inb,
    })
}

fn outer_draw(
    spec: &ModelSpec,
    study: &StudyDesign,
    inner: usize,
    seed: u64,
    s: usize,
) -> Result<OuterResult> {
    let p = spec.parameter_count();
    let k = spec.arm_count - 1;
    let mut r = rng::derived_stream(seed, "oracle-outer", s as u64);
    let theta = spec.prior.sample(&mut r);
    let mut nb = vec![0.0; spec.arm_count];
    let mut theta_inb = vec![0.0; k];
    spec.evaluate_incremental(theta.as_slice(), &mut nb, &mut theta_inb);

    let phi: Vec<f64> = study.focal_parameters.iter().map(|&f| theta[f]).collect();
    let data = model::sample_data(study, &phi, rng::derive_seed(seed, "oracle-data", s as u64))?;
    let posterior = model::posterior_update(spec, study, &data)?;
    let dist = &posterior.distribution;

    let mut r = rng::derived_stream(seed, "oracle-inner", s as u64);
    let mut z = vec![0.0; p];
    let (mut plus, mut minus) = (vec![0.0; p], vec![0.0; p]);
    let mut inb = vec![0.0; k];
    let mut sum = vec![0.0; k];
    let mut add = |theta: &[f64], nb: &mut [f64], sum: &mut [f64]| {
        spec.evaluate_incremental(theta, nb, &mut inb);
        for (a, v) in sum.iter_mut().zip(&inb) {
            *a += v;
        }
    };
    for _ in 0..inner / 2 {
        MultivariateNormal::fill_standard_normal(&mut r, &mut z);
        dist.transform_pair(&z, &mut plus, &mut minus);
        add(&plus, &mut nb, &mut sum);
        add(&minus, &mut nb, &mut sum);
    }
    if inner % 2 == 1 {
        MultivariateNormal::fill_standard_normal(&mut r, &mut z);
        dist.transform(&z, &mut plus);
        add(&plus, &mut nb, &mut sum);
    }
    Ok(OuterResult {
        posterior_mean: sum.into_iter().map(|v| v / inner as f64).collect(),
        theta_inb,
    })
}

/// Exact EVSI of the toy model: the preposterior mean is
/// N(μ₀, s²) with s² = σ₀²·N/(N + σ_d²/σ₀²).
pub fn closed_form_toy_evsi(mu0: f64, sigma0: f64, sigma_d: f64, n: f64) -> Result<f64> {
    if !(sigma0 > 0.0) || !(sigma_d > 0.0) || !(n >= 0.0) {
        return Err(Error::invalid(
            "closed form needs positive standard deviations and N ≥ 0",
        ));
    }
    let s = if n.is_infinite() {
        sigma0
    } else {
        (sigma0 * sigma0 * n / (n + sigma_d * sigma_d / (sigma0 * sigma0))).sqrt()
    };
    Ok(positive_part_gain(mu0, s))
}

/// E[max(0, Y)] - max(0, μ) for Y ~ N(μ, s²).
fn positive_part_gain(mu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let z = mu / s;
    // written on the side that avoids 1 - Φ cancellation
    if mu >= 0.0 {
        s * stats::normal_pdf(z) - mu * stats::normal_cdf(-z)
    } else {
        s * stats::normal_pdf(z) + mu * stats::normal_cdf(z)
    }
}
