//! Bayesian fit of the preposterior variance curve
//! σ²_X(N) = σ²_φ·N/(N + h) and the EVSI curves it implies.

mod mcmc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conditional::ConditionalInb;
use crate::error::{Error, Result};
use crate::linalg;
use crate::moment::{evsi_from_deviations, evsi_multi, rescale_multi, PosteriorVariancePoint};
use crate::psa::InbMoments;
use crate::stats;

pub use mcmc::McmcConfig;

/// Credible levels reported for σ²_X(N) and the EVSI.
pub const DEFAULT_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Relative floor added to the residual variance so a noiseless fit keeps a
/// proper posterior: σ² + (NUGGET·|σ²_φ|)².
pub const NUGGET: f64 = 1e-9;

/// Warnings past this split-R̂.
pub const RHAT_WARNING: f64 = 1.05;

pub const BAND_NOTE: &str = "bands propagate quantiles of the preposterior variance; \
they are not posterior credible intervals for the EVSI";

/// (N_q, y_q) pairs with y_q = σ² - σ²_q for one covariance element.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceObservations {
    pub n: Vec<f64>,
    pub y: Vec<f64>,
    /// Asymptote of the curve, σ²_φ (or σ^{ij}_φ).
    pub sigma_phi: f64,
}

impl VarianceObservations {
    /// Builds the element (i, j) observations from posterior variance points.
    pub fn from_points(
        points: &[PosteriorVariancePoint],
        prior_sigma: f64,
        sigma_phi: f64,
        element: (usize, usize),
    ) -> Result<Self> {
        let (i, j) = element;
        let mut n = Vec::with_capacity(points.len());
        let mut y = Vec::with_capacity(points.len());
        for p in points {
            if i >= p.sigma.nrows() || j >= p.sigma.ncols() {
                return Err(Error::invalid(format!(
                    "variance point {} has no element ({}, {})",
                    p.q + 1,
                    i + 1,
                    j + 1
                )));
            }
            n.push(p.n as f64);
            y.push(prior_sigma - p.sigma[(i, j)]);
        }
        Ok(Self { n, y, sigma_phi })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn n_max(&self) -> f64 {
        self.n.iter().fold(0.0, |a, &b| a.max(b))
    }

    fn validate(&self) -> Result<()> {
        if self.n.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                what: "variance observations",
                expected: self.n.len(),
                found: self.y.len(),
            });
        }
        if self.len() < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 variance observations, got {}",
                self.len()
            )));
        }
        if self.n.iter().any(|&n| !(n >= 1.0) || !n.is_finite()) {
            return Err(Error::invalid(
                "sample sizes in the regression must be at least 1",
            ));
        }
        if self.y.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("non-finite variance observation"));
        }
        if self.sigma_phi == 0.0 || !self.sigma_phi.is_finite() {
            return Err(Error::invalid(
                "the curve asymptote σ_φ must be finite and non-zero",
            ));
        }
        Ok(())
    }
}

/// Prior on (h, σ_ε).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// h ~ N(N_max/2, multiplier·N_max) truncated at 0. The prose value is
    /// 200; 2000 matches the precision in the published sampler script.
    pub h_variance_multiplier: f64,
    /// Overrides the largest observed N in the h prior.
    pub n_max: Option<f64>,
    /// Degrees of freedom of the truncated Student-t prior on σ_ε
    /// (1 gives the half-Cauchy).
    pub sigma_df: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            h_variance_multiplier: 200.0,
            n_max: None,
            sigma_df: 1.0,
        }
    }
}

/// Resolved hyperparameters for one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub h_mean: f64,
    pub h_variance: f64,
    pub sigma_location: f64,
    pub sigma_scale: f64,
    pub sigma_df: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlregPosterior {
    /// Kept draws, chains concatenated in order.
    pub h: Vec<f64>,
    pub sigma_eps: Vec<f64>,
    pub chains: usize,
    pub draws_per_chain: usize,
    /// Acceptance rate of the kept phase per chain.
    pub acceptance: Vec<f64>,
    pub rhat_h: f64,
    pub rhat_sigma: f64,
    pub sigma_phi: f64,
    pub hyper: Hyperparameters,
    /// True when all observations were equal and σ_ε is unidentified.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl NlregPosterior {
    pub fn median_h(&self) -> f64 {
        stats::median(&self.h)
    }

    pub fn median_sigma_eps(&self) -> f64 {
        stats::median(&self.sigma_eps)
    }

    pub fn chain_h(&self, chain: usize) -> &[f64] {
        &self.h[chain * self.draws_per_chain..(chain + 1) * self.draws_per_chain]
    }

    pub fn chain_sigma_eps(&self, chain: usize) -> &[f64] {
        &self.sigma_eps[chain * self.draws_per_chain..(chain + 1) * self.draws_per_chain]
    }
}

pub fn fit_variance_curve(
    obs: &VarianceObservations,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    seed: u64,
) -> Result<NlregPosterior> {
    obs.validate()?;
    mcmc.validate()?;
    if !(prior.h_variance_multiplier > 0.0) || !(prior.sigma_df > 0.0) {
        return Err(Error::invalid(
            "prior variance multiplier and df must be positive",
        ));
    }
    let n_max = prior.n_max.unwrap_or_else(|| obs.n_max());
    if !(n_max > 0.0) {
        return Err(Error::invalid("N_max for the h prior must be positive"));
    }
    let mut warnings = Vec::new();
    let sd_y = stats::std_dev(&obs.y);
    let floor = NUGGET * obs.sigma_phi.abs();
    let degenerate = !(sd_y > floor);
    let sigma_scale = if degenerate {
        warnings.push(
            "all variance observations are equal; the residual scale is not identified".to_string(),
        );
        (1e-6 * obs.sigma_phi.abs()).max(f64::MIN_POSITIVE)
    } else {
        sd_y
    };
    let hyper = Hyperparameters {
        h_mean: n_max / 2.0,
        h_variance: prior.h_variance_multiplier * n_max,
        sigma_location: sigma_scale / 2.0,
        sigma_scale,
        sigma_df: prior.sigma_df,
    };
    let target = mcmc::Target::new(obs, hyper, floor);
    let start = target.least_squares_start();
    let runs: Vec<mcmc::ChainRun> = (0..mcmc.chains)
        .into_par_iter()
        .map(|c| mcmc::run_chain(&target, start, mcmc, seed, c))
        .collect();

    let h_chains: Vec<Vec<f64>> = runs.iter().map(|r| r.h.clone()).collect();
    let s_chains: Vec<Vec<f64>> = runs.iter().map(|r| r.sigma.clone()).collect();
    let rhat_h = stats::split_rhat(&h_chains);
    let rhat_sigma = stats::split_rhat(&s_chains);
    for (name, r) in [("h", rhat_h), ("sigma_eps", rhat_sigma)] {
        if !(r < RHAT_WARNING) {
            warnings.push(format!(
                "split R-hat for {name} is {r:.4} (threshold {RHAT_WARNING})"
            ));
        }
    }
    Ok(NlregPosterior {
        h: h_chains.concat(),
        sigma_eps: s_chains.concat(),
        chains: mcmc.chains,
        draws_per_chain: mcmc.draws,
        acceptance: runs.iter().map(|r| r.acceptance).collect(),
        rhat_h,
        rhat_sigma,
        sigma_phi: obs.sigma_phi,
        hyper,
        degenerate,
        warnings,
    })
}

/// N/(N + h) written as 1/(1 + h/N) so rounding keeps it monotone in N.
fn saturation(n: f64, h: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else if n.is_infinite() {
        1.0
    } else {
        1.0 / (1.0 + h / n)
    }
}

/// Type-7 quantile as a convex combination, monotone in every order statistic.
fn monotone_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let g = pos - lo as f64;
    (1.0 - g) * sorted[lo] + g * sorted[hi]
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid("credible levels must lie in (0, 1)"));
    }
    Ok(())
}

/// Quantiles of N/(N + h) over the posterior draws.
fn saturation_quantiles(post: &NlregPosterior, n: f64, levels: &[f64]) -> Result<Vec<f64>> {
    if post.h.is_empty() {
        return Err(Error::invalid("empty regression posterior"));
    }
    if !(n >= 0.0) {
        return Err(Error::invalid(format!(
            "sample size must be non-negative, got {n}"
        )));
    }
    let mut r: Vec<f64> = post.h.iter().map(|&h| saturation(n, h)).collect();
    r.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&p| monotone_quantile(&r, p)).collect())
}

/// Quantiles of σ²_φ·N/(N + h) at the given levels.
pub fn predict_sigma_x_quantiles(
    post: &NlregPosterior,
    sigma_phi: f64,
    n: f64,
    levels: &[f64],
) -> Result<Vec<f64>> {
    check_levels(levels)?;
    let r = if sigma_phi >= 0.0 {
        saturation_quantiles(post, n, levels)?
    } else {
        // a negative scale reverses the ordering
        let flipped: Vec<f64> = levels.iter().map(|p| 1.0 - p).collect();
        saturation_quantiles(post, n, &flipped)?
    };
    Ok(r.into_iter().map(|v| sigma_phi * v).collect())
}

/// EVSI across sample sizes for each credible level of σ²_X(N).
#[derive(Debug, Clone, PartialEq)]
pub struct EvsiCurve {
    pub grid: Vec<f64>,
    pub levels: Vec<f64>,
    /// `sigma_x[l][i]` is level l at grid point i.
    pub sigma_x: Vec<Vec<f64>>,
    pub evsi: Vec<Vec<f64>>,
    /// EVSI at σ²_X = σ²_φ on the same draws.
    pub evppi: f64,
    pub mu: DVector<f64>,
    pub note: &'static str,
}

impl EvsiCurve {
    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - level).abs() < 1e-12)
    }

    /// EVSI at a level, interpolated linearly between grid points.
    pub fn evsi_at(&self, level: f64, n: f64) -> Option<f64> {
        let l = self.level_index(level)?;
        interpolate(&self.grid, &self.evsi[l], n)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return None;
    }
    let i = xs.partition_point(|&v| v < x);
    if i < xs.len() && xs[i] == x {
        return Some(ys[i]);
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("the sample size grid is empty"));
    }
    if grid.iter().any(|&n| !(n >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "the sample size grid must be increasing and non-negative",
        ));
    }
    Ok(())
}

/// Two-arm EVSI curve. The draws are the conditional INB rescaled to each
/// σ²_X(N) quantile around their own mean.
pub fn evsi_curve(
    post: &NlregPosterior,
    cond: &ConditionalInb,
    grid: &[f64],
    levels: &[f64],
) -> Result<EvsiCurve> {
    check_grid(grid)?;
    check_levels(levels)?;
    if cond.dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "INB columns for a two-arm curve",
            expected: 1,
            found: cond.dim(),
        });
    }
    let mu = cond.mean[0];
    let deviations: Vec<f64> = cond.fitted.iter().map(|f| f - mu).collect();
    let mut sigma_x = vec![Vec::with_capacity(grid.len()); levels.len()];
    let mut evsi = vec![Vec::with_capacity(grid.len()); levels.len()];
    for &n in grid {
        let r = saturation_quantiles(post, n, levels)?;
        for (l, ratio) in r.into_iter().enumerate() {
            sigma_x[l].push(post.sigma_phi * ratio);
            evsi[l].push(evsi_from_deviations(&deviations, mu, ratio.sqrt()));
        }
    }
    Ok(EvsiCurve {
        grid: grid.to_vec(),
        levels: levels.to_vec(),
        sigma_x,
        evsi,
        evppi: evsi_from_deviations(&deviations, mu, 1.0),
        mu: cond.mean.clone(),
        note: BAND_NOTE,
    })
}

/// One regression per unique covariance element (i ≤ j).
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSurface {
    pub dim: usize,
    /// Σ_φ the curves saturate at.
    pub sigma_phi: DMatrix<f64>,
    /// Row-major upper triangle; `None` where σ^{ij}_φ is zero.
    pub elements: Vec<((usize, usize), Option<NlregPosterior>)>,
}

impl VarianceSurface {
    pub fn regressions(&self) -> usize {
        self.elements.iter().filter(|(_, p)| p.is_some()).count()
    }

    pub fn element(&self, i: usize, j: usize) -> Option<&NlregPosterior> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.elements
            .iter()
            .find(|(e, _)| *e == (a, b))
            .and_then(|(_, p)| p.as_ref())
    }

    /// Σ_X(N) assembled from matching per-element quantile levels and
    /// projected onto the PSD cone.
    pub fn sigma_x(&self, n: f64, level: f64) -> Result<DMatrix<f64>> {
        let k = self.dim;
        let mut m = DMatrix::zeros(k, k);
        for ((i, j), post) in &self.elements {
            let v = match post {
                Some(p) => predict_sigma_x_quantiles(p, self.sigma_phi[(*i, *j)], n, &[level])?[0],
                None => 0.0,
            };
            m[(*i, *j)] = v;
            m[(*j, *i)] = v;
        }
        Ok(linalg::project_psd(&m))
    }
}

/// Fits every unique element of the covariance curve.
///
/// All elements share the master seed: common random numbers keep the
/// assembled matrices consistent, and identical elements give identical
/// posteriors.
pub fn fit_variance_surface_multi(
    points: &[PosteriorVariancePoint],
    prior_moments: &InbMoments,
    sigma_phi: &DMatrix<f64>,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    seed: u64,
) -> Result<VarianceSurface> {
    let k = prior_moments.dim();
    if sigma_phi.nrows() != k || sigma_phi.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "Σ_φ dimension",
            expected: k,
            found: sigma_phi.nrows(),
        });
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.sigma.nrows() != k || p.sigma.ncols() != k)
    {
        return Err(Error::invalid(format!(
            "variance point {} is missing covariance elements",
            p.q + 1
        )));
    }
    let mut elements = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            let s = sigma_phi[(i, j)];
            let scale = (sigma_phi[(i, i)] * sigma_phi[(j, j)]).abs().sqrt();
            let fit = if s.abs() <= 1e-12 * scale || s == 0.0 {
                None
            } else {
                let obs = VarianceObservations::from_points(
                    points,
                    prior_moments.covariance[(i, j)],
                    s,
                    (i, j),
                )?;
                Some(fit_variance_curve(&obs, prior, mcmc, seed)?)
            };
            elements.push(((i, j), fit));
        }
    }
    Ok(VarianceSurface {
        dim: k,
        sigma_phi: sigma_phi.clone(),
        elements,
    })
}

/// Multi-decision EVSI curve from the assembled Σ_X(N) matrices.
pub fn evsi_curve_multi(
    surface: &VarianceSurface,
    cond: &ConditionalInb,
    grid: &[f64],
    levels: &[f64],
) -> Result<EvsiCurve> {
    check_grid(grid)?;
    check_levels(levels)?;
    if cond.dim() != surface.dim {
        return Err(Error::DimensionMismatch {
            what: "INB columns",
            expected: surface.dim,
            found: cond.dim(),
        });
    }
    let mu = &cond.mean;
    let mut sigma_x = vec![Vec::with_capacity(grid.len()); levels.len()];
    let mut evsi = vec![Vec::with_capacity(grid.len()); levels.len()];
    for &n in grid {
        for (l, &level) in levels.iter().enumerate() {
            let m = surface.sigma_x(n, level)?;
            let eta = rescale_multi(cond, mu, &surface.sigma_phi, &m)?;
            sigma_x[l].push(m.trace());
            evsi[l].push(evsi_multi(&eta, mu));
        }
    }
    let full = rescale_multi(cond, mu, &surface.sigma_phi, &surface.sigma_phi)?;
    Ok(EvsiCurve {
        grid: grid.to_vec(),
        levels: levels.to_vec(),
        sigma_x,
        evsi,
        evppi: evsi_multi(&full, mu),
        mu: mu.clone(),
        note: BAND_NOTE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub n: f64,
    pub y: f64,
    pub fitted: f64,
    pub residual: f64,
    pub standardized: f64,
}

/// Residuals against the posterior-median curve, scaled by the posterior
/// median of σ_ε.
pub fn residual_diagnostics(
    post: &NlregPosterior,
    obs: &VarianceObservations,
) -> Result<Vec<ResidualRow>> {
    let scale = post.median_sigma_eps();
    obs.n
        .iter()
        .zip(&obs.y)
        .map(|(&n, &y)| {
            let fitted = predict_sigma_x_quantiles(post, post.sigma_phi, n, &[0.5])?[0];
            let residual = y - fitted;
            Ok(ResidualRow {
                n,
                y,
                fitted,
                residual,
                standardized: if scale > 0.0 { residual / scale } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
