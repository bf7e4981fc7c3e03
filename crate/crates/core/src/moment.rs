//! Moment matching: the quantile design, one posterior update per design
//! point, the preposterior variance, and EVSI from rescaled conditional INB.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::conditional::{expected_gain, ConditionalInb};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, ModelSpec, StudyDesign};
use crate::psa::InbMoments;
use crate::rng;
use crate::stats;

pub use crate::linalg::matrix_sqrt_spd;

/// Largest |cor(N_q, φ column)| a design may keep.
pub const DECORRELATION_THRESHOLD: f64 = 0.001;
pub const DECORRELATION_ATTEMPTS: usize = 100_000;

/// Q focal-parameter quantile rows, each paired with a sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDesign {
    /// The probabilities (1..=Q)/(Q+1) behind every column.
    pub probabilities: Vec<f64>,
    /// Q×d; each column holds the quantiles in a decorrelated order.
    pub phi_rows: DMatrix<f64>,
    pub n_values: Vec<usize>,
    /// |cor(N_q, φ column)| per column after decorrelation.
    pub correlations: Vec<f64>,
    /// Permutations drawn per column.
    pub attempts: Vec<usize>,
}

impl QuantileDesign {
    pub fn len(&self) -> usize {
        self.n_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_values.is_empty()
    }

    pub fn max_correlation(&self) -> f64 {
        self.correlations.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Sample sizes evenly spaced on the square-root scale, truncated.
pub fn sqrt_spaced_sizes(q: usize, n_min: usize, n_max: usize) -> Vec<usize> {
    let (a, b) = ((n_min as f64).sqrt(), (n_max as f64).sqrt());
    let mut n: Vec<usize> = (0..q)
        .map(|i| {
            let s = a + (b - a) * i as f64 / (q - 1) as f64;
            (s * s + 1e-9).trunc() as usize
        })
        .collect();
    n[0] = n_min;
    n[q - 1] = n_max;
    n
}

fn type7_quantiles(column: &[f64], probabilities: &[f64]) -> Vec<f64> {
    let sorted = stats::sorted_copy(column);
    probabilities
        .iter()
        .map(|&p| stats::quantile_sorted(&sorted, p))
        .collect()
}

pub fn build_quantile_design(
    phi: &DMatrix<f64>,
    q: usize,
    n_min: usize,
    n_max: usize,
    seed: u64,
) -> Result<QuantileDesign> {
    if q < 2 {
        return Err(Error::invalid(format!("design needs Q ≥ 2, got {q}")));
    }
    if phi.ncols() > 0 && q < 3 {
        return Err(Error::invalid(
            "Q must be at least 3 to decorrelate focal columns from the sample sizes",
        ));
    }
    if n_min < 1 || n_min >= n_max {
        return Err(Error::invalid(format!(
            "need 1 ≤ N_min < N_max, got N_min={n_min}, N_max={n_max}"
        )));
    }
    let n_values = sqrt_spaced_sizes(q, n_min, n_max);
    decorrelated(phi, n_values, seed)
}

/// A design with every study at the same sample size.
pub fn fixed_size_design(
    phi: &DMatrix<f64>,
    q: usize,
    n: usize,
    seed: u64,
) -> Result<QuantileDesign> {
    if q < 2 {
        return Err(Error::invalid(format!("design needs Q ≥ 2, got {q}")));
    }
    decorrelated(phi, vec![n; q], seed)
}

fn decorrelated(phi: &DMatrix<f64>, n_values: Vec<usize>, seed: u64) -> Result<QuantileDesign> {
    let q = n_values.len();
    if phi.nrows() < 2 && phi.ncols() > 0 {
        return Err(Error::invalid("need at least 2 focal draws for quantiles"));
    }
    let probabilities: Vec<f64> = (1..=q).map(|i| i as f64 / (q + 1) as f64).collect();
    let n_real: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    let mut phi_rows = DMatrix::zeros(q, phi.ncols());
    let mut correlations = Vec::with_capacity(phi.ncols());
    let mut attempts = Vec::with_capacity(phi.ncols());
    for (j, col) in phi.column_iter().enumerate() {
        let mut values = type7_quantiles(col.as_slice(), &probabilities);
        let mut rng = rng::derived_stream(seed, "design-column", j as u64);
        let mut tries = 0;
        loop {
            if tries == DECORRELATION_ATTEMPTS {
                return Err(Error::Decorrelation {
                    column: j,
                    attempts: tries,
                });
            }
            values.shuffle(&mut rng);
            tries += 1;
            let r = stats::correlation(&n_real, &values).abs();
            if r < DECORRELATION_THRESHOLD {
                correlations.push(r);
                break;
            }
        }
        attempts.push(tries);
        phi_rows.set_column(j, &DVector::from_vec(values));
    }
    Ok(QuantileDesign {
        probabilities,
        phi_rows,
        n_values,
        correlations,
        attempts,
    })
}

/// Posterior INB covariance after one simulated study.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVariancePoint {
    pub q: usize,
    pub n: usize,
    /// (T-1)×(T-1); 1×1 for a two-arm decision.
    pub sigma: DMatrix<f64>,
    pub seed: u64,
}

impl PosteriorVariancePoint {
    pub fn variance(&self) -> f64 {
        self.sigma[(0, 0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimates {
    pub points: Vec<PosteriorVariancePoint>,
    pub posterior_updates: usize,
    /// Posterior parameter draws pushed through the model.
    pub model_evaluations: usize,
}

/// Simulates one dataset per design row, updates the posterior and records
/// the sample covariance of `m` posterior INB draws.
pub fn estimate_posterior_variances(
    design: &QuantileDesign,
    spec: &ModelSpec,
    study: &StudyDesign,
    m: usize,
    seed: u64,
) -> Result<VarianceEstimates> {
    if m < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 posterior draws, got {m}"
        )));
    }
    if design.phi_rows.ncols() != study.data_dimension() {
        return Err(Error::DimensionMismatch {
            what: "design columns versus observed parameters",
            expected: study.data_dimension(),
            found: design.phi_rows.ncols(),
        });
    }
    study.validate(spec)?;
    let points = (0..design.len())
        .into_par_iter()
        .map(|q| {
            let point_seed = rng::derive_seed(seed, "variance-point", q as u64);
            variance_point(design, spec, study, m, q, point_seed).map_err(|e| {
                Error::AtDesignPoint {
                    q: q + 1,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceEstimates {
        posterior_updates: points.len(),
        model_evaluations: points.len() * m,
        points,
    })
}

fn variance_point(
    design: &QuantileDesign,
    spec: &ModelSpec,
    study: &StudyDesign,
    m: usize,
    q: usize,
    seed: u64,
) -> Result<PosteriorVariancePoint> {
    let n = design.n_values[q];
    let phi: Vec<f64> = design.phi_rows.row(q).iter().copied().collect();
    let study = study.with_sample_size(n);
    let data = model::sample_data(&study, &phi, rng::derive_seed(seed, "data", 0))?;
    let posterior = model::posterior_update(spec, &study, &data)?;
    let draws =
        model::posterior_inb_draws(&posterior, spec, m, rng::derive_seed(seed, "draws", 0))?;
    let sigma = linalg::sample_covariance(&draws);
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite posterior covariance".into()));
    }
    Ok(PosteriorVariancePoint { q, n, sigma, seed })
}

/// Law of total variance: prior INB covariance minus the average posterior
/// covariance. Negative scalars are floored at zero and matrices projected
/// onto the PSD cone.
pub fn pooled_sigma_x(
    moments: &InbMoments,
    points: &[PosteriorVariancePoint],
) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("need at least one posterior variance point"));
    }
    let k = moments.dim();
    let mut mean = DMatrix::zeros(k, k);
    for p in points {
        if p.sigma.nrows() != k || p.sigma.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "posterior covariance dimension",
                expected: k,
                found: p.sigma.nrows(),
            });
        }
        mean += &p.sigma;
    }
    mean /= points.len() as f64;
    let mut sigma_x = &moments.covariance - mean;
    linalg::symmetrize(&mut sigma_x);
    Ok(if k == 1 {
        sigma_x.map(|v| v.max(0.0))
    } else {
        linalg::project_psd(&sigma_x)
    })
}

/// Draws approximating the preposterior mean of the INB.
#[derive(Debug, Clone)]
pub struct RescaledDraws {
    pub eta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma_phi: DMatrix<f64>,
    pub sigma_x: DMatrix<f64>,
}

/// η = (INB^φ - μ)·√(σ²_X/σ²_φ) + μ.
pub fn rescale_dual(
    cond: &ConditionalInb,
    mu: f64,
    sigma2_phi: f64,
    sigma2_x: f64,
) -> Result<RescaledDraws> {
    if cond.dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "INB columns for a two-arm rescale",
            expected: 1,
            found: cond.dim(),
        });
    }
    let c = dual_scale(sigma2_phi, sigma2_x)?;
    let eta = if c == 1.0 {
        cond.fitted.clone()
    } else {
        cond.fitted.map(|f| (f - mu) * c + mu)
    };
    Ok(RescaledDraws {
        eta,
        mu: DVector::from_element(1, mu),
        sigma_phi: DMatrix::from_element(1, 1, sigma2_phi),
        sigma_x: DMatrix::from_element(1, 1, sigma2_x),
    })
}

fn dual_scale(sigma2_phi: f64, sigma2_x: f64) -> Result<f64> {
    if !(sigma2_phi >= 0.0)
        || !(sigma2_x >= 0.0)
        || !sigma2_phi.is_finite()
        || !sigma2_x.is_finite()
    {
        return Err(Error::invalid(format!(
            "variances must be finite and non-negative (σ²_φ={sigma2_phi}, σ²_X={sigma2_x})"
        )));
    }
    if sigma2_phi == 0.0 {
        if sigma2_x > 0.0 {
            return Err(Error::Numerical(
                "conditional INB has zero variance but the preposterior variance is positive"
                    .into(),
            ));
        }
        return Ok(0.0);
    }
    Ok((sigma2_x / sigma2_phi).sqrt())
}

/// Mean over draws of max(0, η) minus max(0, μ).
pub fn evsi_dual(eta: &RescaledDraws, mu: f64) -> f64 {
    expected_gain(&eta.eta, &DVector::from_element(1, mu))
}

/// Two-arm EVSI of the draws `mu + scale·deviation` written so that it is
/// nondecreasing in `scale` in floating point, term by term.
///
/// For μ ≥ 0, E[max(0, μ + cD)] - μ = E[max(0, -μ - cD)] when E[D] = 0;
/// for μ < 0 it is E[max(0, μ + cD)] directly.
pub fn evsi_from_deviations(deviations: &[f64], mu: f64, scale: f64) -> f64 {
    if deviations.is_empty() {
        return 0.0;
    }
    let total: f64 = if mu >= 0.0 {
        deviations.iter().map(|d| (-mu - scale * d).max(0.0)).sum()
    } else {
        deviations.iter().map(|d| (mu + scale * d).max(0.0)).sum()
    };
    total / deviations.len() as f64
}

/// η = (INB^φ - μ) Σ_φ^{-1/2} Σ_X^{1/2} + μ, rows as draws.
///
/// A singular Σ_φ is inverted on its range (Moore-Penrose), which is exact
/// when the centred draws lie in that range, e.g. duplicated arms.
pub fn rescale_multi(
    cond: &ConditionalInb,
    mu: &DVector<f64>,
    sigma_phi: &DMatrix<f64>,
    sigma_x: &DMatrix<f64>,
) -> Result<RescaledDraws> {
    let k = cond.dim();
    for (what, found) in [
        ("mean vector length", mu.len()),
        ("Σ_φ dimension", sigma_phi.nrows()),
        ("Σ_X dimension", sigma_x.nrows()),
    ] {
        if found != k {
            return Err(Error::DimensionMismatch {
                what,
                expected: k,
                found,
            });
        }
    }
    let (inv_root, rank) = linalg::pseudo_inverse_sqrt(sigma_phi)?;
    let centred = {
        let mut c = cond.fitted.clone();
        for mut row in c.row_iter_mut() {
            row -= mu.transpose();
        }
        c
    };
    if rank < k {
        if rank == 0 && sigma_x.iter().any(|v| *v != 0.0) {
            return Err(Error::Numerical("Σ_φ is zero but Σ_X is not".into()));
        }
        let null = linalg::null_space_projector(sigma_phi);
        let leak = (&centred * &null).abs().max();
        let size = centred.abs().max().max(f64::MIN_POSITIVE);
        if leak > 1e-8 * size {
            return Err(Error::NotPositiveDefinite(format!(
                "Σ_φ is singular (rank {rank} of {k}) and the conditional INB leaves its range"
            )));
        }
    }
    let transform = inv_root * matrix_sqrt_spd(sigma_x)?;
    let mut eta = centred * transform;
    for mut row in eta.row_iter_mut() {
        row += mu.transpose();
    }
    Ok(RescaledDraws {
        eta,
        mu: mu.clone(),
        sigma_phi: sigma_phi.clone(),
        sigma_x: sigma_x.clone(),
    })
}

/// Mean of the row-wise max(0, η) minus max(0, μ).
pub fn evsi_multi(eta: &RescaledDraws, mu: &DVector<f64>) -> f64 {
    expected_gain(&eta.eta, mu)
}
