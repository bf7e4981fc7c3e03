//! Conditional expectation of the incremental net benefit given the focal
//! parameters, estimated by penalized regression, and the EVPPI built on it.

mod basis;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub use basis::{BasisSizes, MAX_DIMENSION};

use crate::error::{Error, Result};
use crate::linalg;
use crate::psa::InbDraws;
use basis::Basis;

const CHUNK_ROWS: usize = 4096;

/// How the smoothing parameter is chosen.
///
/// Values are multiples of the mean penalized diagonal of the cross-product
/// matrix, so they are comparable across models and sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    /// Generalized cross-validation over a log-spaced grid of exponents.
    Gcv {
        log10_min: f64,
        log10_max: f64,
        step: f64,
    },
    Fixed(f64),
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::Gcv {
            log10_min: -9.0,
            log10_max: 3.0,
            step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherConfig {
    pub sizes: BasisSizes,
    pub penalty: Penalty,
    /// Rows used for fitting once the focal dimension reaches
    /// `subsample_dimension`; predictions always cover every row.
    pub max_fit_draws: usize,
    pub subsample_dimension: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            sizes: BasisSizes::default(),
            penalty: Penalty::default(),
            max_fit_draws: 20_000,
            subsample_dimension: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitSource {
    Smoother {
        config: SmootherConfig,
        basis_columns: usize,
        unpenalized_columns: usize,
        fit_rows: usize,
        /// Chosen smoothing multiplier per INB column.
        lambda: Vec<f64>,
        /// Effective degrees of freedom per INB column, intercept included.
        edf: Vec<f64>,
    },
    External,
}

/// Draws of the conditional INB with their moments.
#[derive(Debug, Clone)]
pub struct ConditionalInb {
    /// S×(T-1), one row per PSA draw.
    pub fitted: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub source: FitSource,
}

impl ConditionalInb {
    /// Wraps externally computed fitted values.
    pub fn from_fitted(fitted: DMatrix<f64>) -> Result<Self> {
        Self::build(fitted, FitSource::External)
    }

    fn build(fitted: DMatrix<f64>, source: FitSource) -> Result<Self> {
        if fitted.nrows() < 2 || fitted.ncols() == 0 {
            return Err(Error::invalid(format!(
                "fitted values need at least 2 rows and 1 column, got {}×{}",
                fitted.nrows(),
                fitted.ncols()
            )));
        }
        if fitted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite fitted value".into()));
        }
        Ok(Self {
            mean: linalg::column_means(&fitted),
            covariance: linalg::sample_covariance(&fitted),
            fitted,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.fitted.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.fitted.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.fitted.ncols()
    }

    /// Scalar variance for a two-arm decision.
    pub fn variance(&self) -> f64 {
        self.covariance[(0, 0)]
    }
}

/// Regresses each INB column on the focal parameter draws.
pub fn fit_conditional_inb(
    inb: &InbDraws,
    phi: &DMatrix<f64>,
    config: &SmootherConfig,
) -> Result<ConditionalInb> {
    let n = inb.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 draws, got {n}")));
    }
    if phi.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "focal parameter rows",
            expected: n,
            found: phi.nrows(),
        });
    }
    if phi.iter().chain(inb.values.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in regression input"));
    }
    let d = phi.ncols();
    let fit_rows = if d >= config.subsample_dimension {
        n.min(config.max_fit_draws.max(2))
    } else {
        n
    };
    let fit_phi = phi.rows(0, fit_rows).into_owned();
    let basis = Basis::new(&fit_phi, config.sizes)?;
    let p = basis.columns();
    let k = inb.dim();

    // Centred cross products over the fitting rows.
    let y_fit = inb.values.rows(0, fit_rows);
    let y_mean = linalg::column_means(&y_fit.into_owned());
    let mut x_sum = DVector::zeros(p);
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DMatrix::zeros(p, k);
    let mut start = 0;
    while start < fit_rows {
        let end = (start + CHUNK_ROWS).min(fit_rows);
        let x = basis.design(&fit_phi, start..end);
        let mut y = inb.values.rows(start, end - start).into_owned();
        for mut row in y.row_iter_mut() {
            row -= y_mean.transpose();
        }
        for r in 0..x.nrows() {
            x_sum += x.row(r).transpose();
        }
        xtx.gemm_tr(1.0, &x, &x, 1.0);
        xty.gemm_tr(1.0, &x, &y, 1.0);
        start = end;
    }
    let nf = fit_rows as f64;
    let x_mean = &x_sum / nf;
    xtx -= &x_mean * x_mean.transpose() * nf;
    linalg::symmetrize(&mut xtx);
    // Σx = 0 for the centred y, so Xᵀy needs no correction.
    let mut yty: DVector<f64> = DVector::zeros(k);
    for c in 0..k {
        let m = y_mean[c];
        yty[c] = inb
            .values
            .column(c)
            .rows(0, fit_rows)
            .iter()
            .map(|v| (v - m) * (v - m))
            .sum();
    }

    check_unpenalized_rank(&xtx, basis.unpenalized_columns())?;

    let penalty = basis.penalty_diagonal();
    let pen_count = penalty.iter().filter(|v| **v > 0.0).count().max(1);
    let scale = (0..p)
        .filter(|&i| penalty[i] > 0.0)
        .map(|i| xtx[(i, i)])
        .sum::<f64>()
        / pen_count as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let grid: Vec<f64> = match &config.penalty {
        Penalty::Fixed(l) => {
            if !(*l >= 0.0) || !l.is_finite() {
                return Err(Error::invalid(
                    "fixed penalty must be finite and non-negative",
                ));
            }
            vec![*l]
        }
        Penalty::Gcv {
            log10_min,
            log10_max,
            step,
        } => {
            if !(step > &0.0) || log10_max < log10_min {
                return Err(Error::invalid("GCV grid needs step > 0 and min ≤ max"));
            }
            let count = ((log10_max - log10_min) / step + 1e-9).floor() as usize + 1;
            (0..count)
                .map(|i| 10f64.powf(log10_min + i as f64 * step))
                .collect()
        }
    };

    let mut best: Vec<Option<(f64, f64, f64, DVector<f64>)>> = vec![None; k];
    for &lambda in &grid {
        let mut a = xtx.clone();
        for i in 0..p {
            a[(i, i)] += lambda * scale * penalty[i];
        }
        let Some(chol) = Cholesky::new(a) else {
            continue;
        };
        let beta = chol.solve(&xty);
        let hat = chol.solve(&xtx);
        let edf = 1.0 + hat.trace();
        let resid_df = nf - edf;
        if resid_df <= 0.5 {
            continue;
        }
        for c in 0..k {
            let b = beta.column(c);
            let quad: f64 = b.dot(&(&xtx * b));
            let rss = (yty[c] - 2.0 * b.dot(&xty.column(c)) + quad).max(0.0);
            let score = nf * rss / (resid_df * resid_df);
            let better = match &best[c] {
                None => true,
                Some((s, ..)) => score <= *s,
            };
            if better {
                best[c] = Some((score, lambda, edf, b.into_owned()));
            }
        }
    }

    let mut coef = DMatrix::zeros(p, k);
    let mut lambdas = Vec::with_capacity(k);
    let mut edfs = Vec::with_capacity(k);
    for (c, b) in best.into_iter().enumerate() {
        let Some((_, lambda, edf, beta)) = b else {
            return Err(Error::RankDeficientBasis(format!(
                "{fit_rows} draws cannot support {} basis columns",
                p + 1
            )));
        };
        coef.set_column(c, &beta);
        lambdas.push(lambda);
        edfs.push(edf);
    }

    let mut fitted = DMatrix::zeros(n, k);
    let offset = y_mean.transpose() - x_mean.transpose() * &coef;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK_ROWS).min(n);
        let x = basis.design(phi, start..end);
        let mut block = x * &coef;
        for mut row in block.row_iter_mut() {
            row += &offset;
        }
        fitted.rows_mut(start, end - start).copy_from(&block);
        start = end;
    }
    if fit_rows < n {
        // Refit the intercept on every row with the slopes held fixed.
        let raw = linalg::column_means(&inb.values);
        let now = linalg::column_means(&fitted);
        for c in 0..k {
            let shift = raw[c] - now[c];
            fitted.column_mut(c).add_scalar_mut(shift);
        }
    }

    ConditionalInb::build(
        fitted,
        FitSource::Smoother {
            config: config.clone(),
            basis_columns: p + 1,
            unpenalized_columns: basis.unpenalized_columns() + 1,
            fit_rows,
            lambda: lambdas,
            edf: edfs,
        },
    )
}

fn check_unpenalized_rank(xtx: &DMatrix<f64>, u: usize) -> Result<()> {
    let block = xtx.view((0, 0), (u, u)).into_owned();
    let diag_max = (0..u).map(|i| block[(i, i)]).fold(0.0_f64, f64::max);
    let ok = Cholesky::<f64, Dyn>::new(block).map(|c| {
        let l = c.l();
        (0..u).all(|i| l[(i, i)] * l[(i, i)] > 1e-10 * diag_max)
    });
    if ok == Some(true) {
        Ok(())
    } else {
        Err(Error::RankDeficientBasis(
            "linear and interaction terms are collinear over the fitting draws".into(),
        ))
    }
}

/// Expected value of partial perfect information on the focal parameters.
pub fn evppi(cond: &ConditionalInb) -> f64 {
    expected_gain(&cond.fitted, &cond.mean)
}

/// `mean_s max(0, row_s) - max(0, mu)` over the rows of `values`.
pub(crate) fn expected_gain(values: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    if values.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = values
        .row_iter()
        .map(|r| r.iter().fold(0.0_f64, |a, &b| a.max(b)))
        .sum();
    let baseline = mu.iter().fold(0.0_f64, |a, &b| a.max(b));
    (total / values.nrows() as f64 - baseline).max(0.0)
}
