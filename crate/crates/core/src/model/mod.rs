//! Health-economic model abstraction: prior sampling, net-benefit
//! evaluation, study-data simulation and conjugate posterior updating.
//!
//! Both built-in models have a jointly normal prior and normally
//! distributed study data on a subset of the parameters, so the posterior
//! after any dataset is again normal and is computed in closed form.

mod bk;
mod toy;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

pub use bk::{bk_exercise, BK_EXERCISES, BK_WILLINGNESS_TO_PAY};
pub use toy::{toy_study, ToyParameters};

/// A multivariate normal distribution together with a sampling factor.
#[derive(Debug, Clone)]
pub struct MultivariateNormal {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl MultivariateNormal {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance dimension",
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        let factor = linalg::sampling_factor(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    /// Independent normals with block-wise equicorrelation.
    pub fn from_blocks(means: &[f64], sds: &[f64], blocks: &[(Vec<usize>, f64)]) -> Result<Self> {
        if means.len() != sds.len() {
            return Err(Error::DimensionMismatch {
                what: "prior standard deviations",
                expected: means.len(),
                found: sds.len(),
            });
        }
        if let Some(sd) = sds.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!(
                "prior SD must be positive, got {sd}"
            )));
        }
        let p = means.len();
        let mut corr = DMatrix::<f64>::identity(p, p);
        for (members, rho) in blocks {
            for &a in members {
                for &b in members {
                    if a >= p || b >= p {
                        return Err(Error::invalid(format!("block index {a}/{b} out of range")));
                    }
                    if a != b {
                        corr[(a, b)] = *rho;
                    }
                }
            }
        }
        if !linalg::is_positive_definite(&corr) {
            return Err(Error::NotPositiveDefinite(
                "prior correlation matrix".into(),
            ));
        }
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(sds));
        let cov = &d * corr * &d;
        Self::new(DVector::from_column_slice(means), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `out = mean + F z` for a caller-supplied standard-normal vector.
    pub(crate) fn transform(&self, z: &[f64], out: &mut [f64]) {
        let p = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(p) {
            let mut acc = self.mean[i];
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(i, j)] * zj;
            }
            *o = acc;
        }
    }

    /// Antithetic pair `mean ± F z`.
    pub(crate) fn transform_pair(&self, z: &[f64], plus: &mut [f64], minus: &mut [f64]) {
        let p = self.dim();
        for i in 0..p {
            let mut dev = 0.0;
            for (j, zj) in z.iter().enumerate() {
                dev += self.factor[(i, j)] * zj;
            }
            plus[i] = self.mean[i] + dev;
            minus[i] = self.mean[i] - dev;
        }
    }

    pub(crate) fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, z: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut z = vec![0.0; self.dim()];
        Self::fill_standard_normal(rng, &mut z);
        let mut out = DVector::zeros(self.dim());
        self.transform(&z, out.as_mut_slice());
        out
    }
}

/// Net-benefit functions of the built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetBenefitFn {
    /// Two-arm Brennan-Kharroubi model.
    BrennanKharroubi,
    /// Three arms where arm 3 is an exact copy of arm 2.
    BrennanKharroubiDuplicated,
    /// INB = λθ; a shared cost enters both arms and cancels.
    NormalToy,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub id: String,
    pub arm_count: usize,
    pub parameter_names: Vec<String>,
    /// λ, money per QALY.
    pub willingness_to_pay: f64,
    pub prior: MultivariateNormal,
    /// Zero-based arm used as the comparator for incremental net benefit.
    pub reference_arm: usize,
    pub net_benefit: NetBenefitFn,
}

impl ModelSpec {
    /// Look up a built-in model by identifier.
    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "bk" => bk::spec(NetBenefitFn::BrennanKharroubi),
            "bk-3arm" => bk::spec(NetBenefitFn::BrennanKharroubiDuplicated),
            "normal-toy" => toy::spec(&ToyParameters::default()),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    pub fn normal_toy(params: &ToyParameters) -> Result<Self> {
        toy::spec(params)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arm_count < 2 {
            return Err(Error::invalid("a decision needs at least two arms"));
        }
        if !(self.willingness_to_pay > 0.0) {
            return Err(Error::invalid("willingness to pay must be positive"));
        }
        if self.reference_arm >= self.arm_count {
            return Err(Error::invalid(format!(
                "reference arm {} out of range for {} arms",
                self.reference_arm + 1,
                self.arm_count
            )));
        }
        if self.prior.dim() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                what: "prior dimension",
                expected: self.parameter_count(),
                found: self.prior.dim(),
            });
        }
        Ok(())
    }

    pub fn with_reference_arm(mut self, arm: usize) -> Result<Self> {
        self.reference_arm = arm;
        self.validate()?;
        Ok(self)
    }

    /// Net benefit of every arm for one parameter vector.
    pub fn evaluate(&self, theta: &[f64], out: &mut [f64]) {
        match self.net_benefit {
            NetBenefitFn::BrennanKharroubi => bk::net_benefit(self.willingness_to_pay, theta, out),
            NetBenefitFn::BrennanKharroubiDuplicated => {
                bk::net_benefit(self.willingness_to_pay, theta, &mut out[..2]);
                out[2] = out[1];
            }
            NetBenefitFn::NormalToy => toy::net_benefit(self.willingness_to_pay, theta, out),
        }
    }

    /// Non-reference arms in stable order.
    pub fn comparator_arms(&self) -> Vec<usize> {
        (0..self.arm_count)
            .filter(|&a| a != self.reference_arm)
            .collect()
    }

    fn incremental(&self, nb: &[f64], out: &mut [f64]) {
        let base = nb[self.reference_arm];
        let arms = (0..self.arm_count).filter(|&a| a != self.reference_arm);
        for (o, a) in out.iter_mut().zip(arms) {
            *o = nb[a] - base;
        }
    }

    pub(crate) fn evaluate_incremental(&self, theta: &[f64], nb: &mut [f64], out: &mut [f64]) {
        self.evaluate(theta, nb);
        self.incremental(nb, out);
    }
}

/// Identifies which data-collection exercise a design describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exercise {
    Bk(u32),
    Toy,
}

/// A proposed study: which parameters it observes, how noisy each
/// observation is, and how many participants it recruits.
#[derive(Debug, Clone)]
pub struct StudyDesign {
    pub exercise: Exercise,
    pub focal_parameters: Vec<usize>,
    pub data_sd: Vec<f64>,
    pub data_correlation: DMatrix<f64>,
    pub sample_size: usize,
}

impl StudyDesign {
    /// Resolve the exercise for a built-in model. The toy model has one.
    pub fn for_model(spec: &ModelSpec, exercise: u32) -> Result<Self> {
        match spec.net_benefit {
            NetBenefitFn::NormalToy => {
                if exercise != 1 {
                    return Err(Error::UnknownExercise(exercise));
                }
                Ok(toy_study(ToyParameters::default().sigma_d, 0))
            }
            _ => bk_exercise(exercise, 0),
        }
    }

    pub fn data_dimension(&self) -> usize {
        self.focal_parameters.len()
    }

    pub fn with_sample_size(&self, n: usize) -> Self {
        let mut d = self.clone();
        d.sample_size = n;
        d
    }

    pub fn data_covariance(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.data_sd));
        &d * &self.data_correlation * &d
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let k = self.focal_parameters.len();
        let p = spec.parameter_count();
        if k == 0 {
            return Err(Error::invalid("study must observe at least one parameter"));
        }
        if k >= p {
            return Err(Error::invalid(
                "focal parameters must be a strict subset of the model parameters",
            ));
        }
        let mut seen = vec![false; p];
        for &f in &self.focal_parameters {
            if f >= p || std::mem::replace(&mut seen[f], true) {
                return Err(Error::invalid(format!("bad focal parameter index {f}")));
            }
        }
        if self.data_sd.len() != k {
            return Err(Error::DimensionMismatch {
                what: "data SD count",
                expected: k,
                found: self.data_sd.len(),
            });
        }
        if let Some(sd) = self.data_sd.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!(
                "data SD must be positive, got {sd}"
            )));
        }
        if self.data_correlation.nrows() != k || self.data_correlation.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "data correlation dimension",
                expected: k,
                found: self.data_correlation.nrows(),
            });
        }
        if !linalg::is_positive_definite(&self.data_correlation) {
            return Err(Error::NotPositiveDefinite("data covariance".into()));
        }
        Ok(())
    }
}

/// An S×P table of parameter draws; row s is one PSA simulation.
#[derive(Debug, Clone)]
pub struct ParameterDraws {
    pub values: DMatrix<f64>,
    pub parameter_names: Vec<String>,
    pub seed: Option<u64>,
}

impl ParameterDraws {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// The S×d sub-table of the given columns.
    pub fn select_columns(&self, columns: &[usize]) -> DMatrix<f64> {
        self.values.select_columns(columns)
    }
}

/// An S×T table of per-arm net benefit.
#[derive(Debug, Clone)]
pub struct NetBenefitDraws {
    pub values: DMatrix<f64>,
}

/// Simulated study data, N×k.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub design: StudyDesign,
    pub generating_phi: Vec<f64>,
}

/// The (normal) posterior over all model parameters after a dataset.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    pub distribution: MultivariateNormal,
    pub observations: usize,
}

pub fn sample_prior(spec: &ModelSpec, draws: usize, seed: u64) -> Result<ParameterDraws> {
    if draws < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 prior draws, got {draws}"
        )));
    }
    spec.validate()?;
    let p = spec.parameter_count();
    let mut rng = rng::stream(seed);
    // Rows are generated in order, so a prefix of a larger sample equals a
    // smaller sample with the same seed.
    let mut z = DMatrix::<f64>::zeros(draws, p);
    for s in 0..draws {
        for j in 0..p {
            z[(s, j)] = rng.sample(StandardNormal);
        }
    }
    let mut values = z * spec.prior.factor.transpose();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(spec.prior.mean[j]);
    }
    Ok(ParameterDraws {
        values,
        parameter_names: spec.parameter_names.clone(),
        seed: Some(seed),
    })
}

pub fn net_benefit(draws: &ParameterDraws, spec: &ModelSpec) -> Result<NetBenefitDraws> {
    let p = spec.parameter_count();
    if draws.values.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "parameter columns",
            expected: p,
            found: draws.values.ncols(),
        });
    }
    let s = draws.values.nrows();
    let mut out = DMatrix::<f64>::zeros(s, spec.arm_count);
    let mut theta = vec![0.0; p];
    let mut nb = vec![0.0; spec.arm_count];
    for row in 0..s {
        for (j, t) in theta.iter_mut().enumerate() {
            *t = draws.values[(row, j)];
        }
        spec.evaluate(&theta, &mut nb);
        for (t, v) in nb.iter().enumerate() {
            out[(row, t)] = *v;
        }
    }
    Ok(NetBenefitDraws { values: out })
}

pub fn sample_data(design: &StudyDesign, phi: &[f64], seed: u64) -> Result<Dataset> {
    let k = design.data_dimension();
    if phi.len() != k {
        return Err(Error::DimensionMismatch {
            what: "focal vector",
            expected: k,
            found: phi.len(),
        });
    }
    let n = design.sample_size;
    let mut observations = DMatrix::<f64>::zeros(n, k);
    if n > 0 {
        let noise =
            MultivariateNormal::new(DVector::from_column_slice(phi), design.data_covariance())?;
        let mut rng = rng::stream(seed);
        let mut z = vec![0.0; k];
        let mut x = vec![0.0; k];
        for i in 0..n {
            MultivariateNormal::fill_standard_normal(&mut rng, &mut z);
            noise.transform(&z, &mut x);
            for (j, v) in x.iter().enumerate() {
                observations[(i, j)] = *v;
            }
        }
    }
    Ok(Dataset {
        observations,
        design: design.clone(),
        generating_phi: phi.to_vec(),
    })
}

/// Exact linear-Gaussian update of the full parameter vector.
///
/// With x̄ the observation mean and R the per-observation covariance,
/// x̄ ~ N(Hθ, R/N), so the Kalman form gives
/// m' = m + K(x̄ - Hm), P' = P - KHP with K = PHᵀ(HPHᵀ + R/N)⁻¹.
pub fn posterior_update(
    spec: &ModelSpec,
    design: &StudyDesign,
    data: &Dataset,
) -> Result<PosteriorSampler> {
    let k = design.data_dimension();
    let n = data.observations.nrows();
    if data.observations.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "data columns",
            expected: k,
            found: data.observations.ncols(),
        });
    }
    if n != design.sample_size {
        return Err(Error::DimensionMismatch {
            what: "data rows",
            expected: design.sample_size,
            found: n,
        });
    }
    if n == 0 {
        return Ok(PosteriorSampler {
            distribution: spec.prior.clone(),
            observations: 0,
        });
    }
    let prior_cov = spec.prior.covariance();
    let prior_mean = spec.prior.mean();
    let focal = &design.focal_parameters;
    let xbar = linalg::column_means(&data.observations);

    // P Hᵀ and H P Hᵀ are column/row selections of P.
    let pht = prior_cov.select_columns(focal);
    let hpht = pht.select_rows(focal);
    let innovation_cov = hpht + design.data_covariance() / n as f64;
    let chol = nalgebra::Cholesky::new(innovation_cov)
        .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
    let gain = chol.solve(&pht.transpose()).transpose();
    let residual = DVector::from_iterator(
        k,
        focal
            .iter()
            .enumerate()
            .map(|(i, &f)| xbar[i] - prior_mean[f]),
    );
    let mean = prior_mean + &gain * residual;
    let mut cov = prior_cov - &gain * pht.transpose();
    linalg::symmetrize(&mut cov);
    Ok(PosteriorSampler {
        distribution: MultivariateNormal::new(mean, cov)?,
        observations: n,
    })
}

/// M posterior draws of the incremental net benefit, M×(T-1).
pub fn posterior_inb_draws(
    sampler: &PosteriorSampler,
    spec: &ModelSpec,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if draws < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 posterior draws, got {draws}"
        )));
    }
    let dist = &sampler.distribution;
    let p = dist.dim();
    let mut rng = rng::stream(seed);
    let mut z = vec![0.0; p];
    let mut theta = vec![0.0; p];
    let mut nb = vec![0.0; spec.arm_count];
    let mut inb = vec![0.0; spec.arm_count - 1];
    let mut out = DMatrix::<f64>::zeros(draws, spec.arm_count - 1);
    for m in 0..draws {
        MultivariateNormal::fill_standard_normal(&mut rng, &mut z);
        dist.transform(&z, &mut theta);
        spec.evaluate_incremental(&theta, &mut nb, &mut inb);
        for (c, v) in inb.iter().enumerate() {
            out[(m, c)] = *v;
        }
    }
    Ok(out)
}
