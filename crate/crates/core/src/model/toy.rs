//! One-parameter normal-normal model with a closed-form EVSI.
//!
//! θ ~ N(μ₀, σ₀²), observations x_i ~ N(θ, σ_d²), INB = λθ with λ = 1.
//! A second parameter, a cost common to both arms, keeps the observed set a
//! strict subset of the parameters without changing the INB.

use nalgebra::DMatrix;

use super::{Exercise, ModelSpec, MultivariateNormal, NetBenefitFn, StudyDesign};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParameters {
    pub mu0: f64,
    pub sigma0: f64,
    pub sigma_d: f64,
}

impl Default for ToyParameters {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            sigma0: 1.0,
            sigma_d: 1.0,
        }
    }
}

pub(super) fn spec(params: &ToyParameters) -> Result<ModelSpec> {
    if !(params.sigma0 > 0.0) || !(params.sigma_d > 0.0) {
        return Err(Error::invalid(
            "toy model standard deviations must be positive",
        ));
    }
    let prior = MultivariateNormal::from_blocks(&[params.mu0, 0.0], &[params.sigma0, 1.0], &[])?;
    let spec = ModelSpec {
        id: "normal-toy".to_string(),
        arm_count: 2,
        parameter_names: vec!["theta".into(), "shared_cost".into()],
        willingness_to_pay: 1.0,
        prior,
        reference_arm: 0,
        net_benefit: NetBenefitFn::NormalToy,
    };
    spec.validate()?;
    Ok(spec)
}

pub(super) fn net_benefit(lambda: f64, t: &[f64], out: &mut [f64]) {
    out[0] = -t[1];
    out[1] = lambda * t[0] - t[1];
}

pub fn toy_study(sigma_d: f64, sample_size: usize) -> StudyDesign {
    StudyDesign {
        exercise: Exercise::Toy,
        focal_parameters: vec![0],
        data_sd: vec![sigma_d],
        data_correlation: DMatrix::identity(1, 1),
        sample_size,
    }
}
