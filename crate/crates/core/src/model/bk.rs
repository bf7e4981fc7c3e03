//! The Brennan-Kharroubi two-drug model.
//!
//! Parameters are indexed θ1..θ19 (zero-based 0..18 here). θ1-θ10 belong to
//! drug 1 except θ4 (hospital cost per day), which both arms share; θ11-θ19
//! belong to drug 2.

use nalgebra::DMatrix;

use super::{Exercise, ModelSpec, MultivariateNormal, NetBenefitFn, StudyDesign};
use crate::error::{Error, Result};

pub const BK_WILLINGNESS_TO_PAY: f64 = 100_000.0;

/// Exercise ids accepted by [`bk_exercise`].
pub const BK_EXERCISES: [u32; 5] = [1, 2, 3, 4, 5];

const PRIOR_MEAN: [f64; 19] = [
    10_000.0, 0.1, 5.2, 4_000.0, 0.7, 0.3, 3.0, 0.25, -0.1, 0.5, // θ1..θ10
    15_000.0, 0.08, 6.1, 0.8, 0.3, 3.0, 0.2, -0.1, 0.5, // θ11..θ19
];

const PRIOR_SD: [f64; 19] = [
    10.0, 0.02, 1.0, 2_000.0, 0.1, 0.1, 0.5, 0.1, 0.02, 0.2, //
    10.0, 0.02, 1.0, 0.1, 0.05, 1.0, 0.05, 0.02, 0.2,
];

const RHO: f64 = 0.6;

// Response probability and duration for both drugs; utility of response.
const BLOCK_RESPONSE: [usize; 4] = [4, 13, 6, 15];
const BLOCK_UTILITY: [usize; 2] = [5, 14];

fn data_sd(param: usize) -> Option<f64> {
    match param {
        4 | 13 | 5 | 14 => Some(0.2),
        6 => Some(1.0),
        15 => Some(2.0),
        _ => None,
    }
}

fn same_block(a: usize, b: usize) -> bool {
    (BLOCK_RESPONSE.contains(&a) && BLOCK_RESPONSE.contains(&b))
        || (BLOCK_UTILITY.contains(&a) && BLOCK_UTILITY.contains(&b))
}

pub(super) fn spec(kind: NetBenefitFn) -> Result<ModelSpec> {
    let prior = MultivariateNormal::from_blocks(
        &PRIOR_MEAN,
        &PRIOR_SD,
        &[
            (BLOCK_RESPONSE.to_vec(), RHO),
            (BLOCK_UTILITY.to_vec(), RHO),
        ],
    )?;
    let (id, arms) = match kind {
        NetBenefitFn::BrennanKharroubiDuplicated => ("bk-3arm", 3),
        _ => ("bk", 2),
    };
    let spec = ModelSpec {
        id: id.to_string(),
        arm_count: arms,
        parameter_names: (1..=19).map(|i| format!("theta{i}")).collect(),
        willingness_to_pay: BK_WILLINGNESS_TO_PAY,
        prior,
        reference_arm: 0,
        net_benefit: kind,
    };
    spec.validate()?;
    Ok(spec)
}

pub(super) fn net_benefit(lambda: f64, t: &[f64], out: &mut [f64]) {
    let effect1 = t[4] * t[5] * t[6] + t[7] * t[8] * t[9];
    let cost1 = t[0] + t[1] * t[2] * t[3];
    let effect2 = t[13] * t[14] * t[15] + t[16] * t[17] * t[18];
    let cost2 = t[10] + t[11] * t[12] * t[3];
    out[0] = lambda * effect1 - cost1;
    out[1] = lambda * effect2 - cost2;
}

/// Study design for one of the five data-collection exercises.
///
/// Observations on parameters from the same prior block share correlation
/// 0.6; observations across blocks are independent.
pub fn bk_exercise(exercise: u32, sample_size: usize) -> Result<StudyDesign> {
    let focal: Vec<usize> = match exercise {
        1 => vec![4, 13],
        2 => vec![5, 14],
        3 => vec![6, 15],
        4 => vec![4, 13, 5, 14],
        5 => vec![4, 13, 6, 15, 5, 14],
        other => return Err(Error::UnknownExercise(other)),
    };
    let k = focal.len();
    let sds = focal
        .iter()
        .map(|&p| data_sd(p).expect("observed parameters have a data SD"))
        .collect();
    let corr = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if same_block(focal[i], focal[j]) {
            RHO
        } else {
            0.0
        }
    });
    Ok(StudyDesign {
        exercise: Exercise::Bk(exercise),
        focal_parameters: focal,
        data_sd: sds,
        data_correlation: corr,
        sample_size,
    })
}
