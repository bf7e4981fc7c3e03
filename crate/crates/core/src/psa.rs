//! Incremental net benefit and its first two moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::NetBenefitDraws;

/// S×(T-1) incremental net benefit against a reference arm.
#[derive(Debug, Clone)]
pub struct InbDraws {
    pub values: DMatrix<f64>,
    pub reference_arm: usize,
    /// Zero-based arm behind each column.
    pub arms: Vec<usize>,
}

impl InbDraws {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InbMoments {
    pub mean: DVector<f64>,
    /// 1×1 for a two-arm decision.
    pub covariance: DMatrix<f64>,
}

impl InbMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The scalar variance of a two-arm decision.
    pub fn variance(&self) -> f64 {
        self.covariance[(0, 0)]
    }
}

pub fn compute_inb(nb: &NetBenefitDraws, reference_arm: usize) -> Result<InbDraws> {
    let t = nb.values.ncols();
    if t < 2 {
        return Err(Error::invalid(format!("need at least two arms, got {t}")));
    }
    if reference_arm >= t {
        return Err(Error::invalid(format!(
            "reference arm {} out of range for {t} arms",
            reference_arm + 1
        )));
    }
    let arms: Vec<usize> = (0..t).filter(|&a| a != reference_arm).collect();
    let base = nb.values.column(reference_arm);
    let mut values = DMatrix::zeros(nb.values.nrows(), arms.len());
    for (c, &a) in arms.iter().enumerate() {
        values.set_column(c, &(nb.values.column(a) - base));
    }
    Ok(InbDraws {
        values,
        reference_arm,
        arms,
    })
}

pub fn inb_moments(inb: &InbDraws) -> Result<InbMoments> {
    if inb.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 draws, got {}",
            inb.len()
        )));
    }
    Ok(InbMoments {
        mean: linalg::column_means(&inb.values),
        covariance: linalg::sample_covariance(&inb.values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nb(rows: usize, cols: usize, data: &[f64]) -> NetBenefitDraws {
        NetBenefitDraws {
            values: DMatrix::from_row_slice(rows, cols, data),
        }
    }

    #[test]
    fn two_arm_difference() {
        let inb = compute_inb(&nb(1, 2, &[1.0, 3.0]), 1).unwrap();
        assert_eq!(inb.values[(0, 0)], -2.0);
        assert_eq!(inb.arms, vec![0]);
    }

    #[test]
    fn identical_arms_give_zero() {
        let inb = compute_inb(&nb(2, 3, &[5.0, 5.0, 5.0, -1.0, -1.0, -1.0]), 2).unwrap();
        assert!(inb.values.iter().all(|v| *v == 0.0));
        assert_eq!(inb.dim(), 2);
    }

    #[test]
    fn bk_prior_means_row() {
        let inb = compute_inb(&nb(1, 2, &[49_670.0, 54_048.0]), 0).unwrap();
        assert_eq!(inb.values[(0, 0)], 4_378.0);
    }

    #[test]
    fn rejects_single_arm_and_bad_reference() {
        assert!(compute_inb(&nb(1, 1, &[1.0]), 0).is_err());
        assert!(compute_inb(&nb(1, 2, &[1.0, 2.0]), 2).is_err());
    }

    #[test]
    fn moments_of_small_samples() {
        let inb = compute_inb(&nb(2, 2, &[0.0, 1.0, 0.0, 3.0]), 0).unwrap();
        let m = inb_moments(&inb).unwrap();
        assert_eq!(m.mean[0], 2.0);
        assert_eq!(m.variance(), 2.0);
        assert_eq!(m.covariance.shape(), (1, 1));

        let flat = compute_inb(&nb(3, 2, &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0]), 0).unwrap();
        assert_eq!(inb_moments(&flat).unwrap().variance(), 0.0);

        let one = compute_inb(&nb(1, 2, &[0.0, 1.0]), 0).unwrap();
        assert!(inb_moments(&one).is_err());
    }

    #[test]
    fn two_column_covariance_matches_double_loop() {
        let data: Vec<f64> = (0..60)
            .map(|i| ((i * 37 % 17) as f64).sin() * 100.0)
            .collect();
        let inb = compute_inb(&nb(20, 3, &data), 0).unwrap();
        let m = inb_moments(&inb).unwrap();
        let s = inb.len();
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        // ½ Σ_i Σ_j (x_i - x_j)(y_i - y_j) = S Σ (x - x̄)(y - ȳ)
                        acc += (inb.values[(i, a)] - inb.values[(j, a)])
                            * (inb.values[(i, b)] - inb.values[(j, b)]);
                    }
                }
                let brute = acc / (2.0 * s as f64 * (s as f64 - 1.0));
                assert!((m.covariance[(a, b)] - brute).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn adding_back_the_reference_reproduces_net_benefit(
            data in proptest::collection::vec(-1e4f64..1e4, 12),
            reference in 0usize..3,
        ) {
            let table = nb(4, 3, &data);
            let inb = compute_inb(&table, reference).unwrap();
            for (c, &arm) in inb.arms.iter().enumerate() {
                for r in 0..4 {
                    let back = inb.values[(r, c)] + table.values[(r, reference)];
                    prop_assert!((back - table.values[(r, arm)]).abs() <= 1e-12 * table.values[(r, arm)].abs().max(1.0));
                }
            }
        }

        #[test]
        fn covariance_ignores_row_order(
            data in proptest::collection::vec(-100f64..100.0, 24),
            seed in any::<u64>(),
        ) {
            let table = nb(8, 3, &data);
            let inb = compute_inb(&table, 0).unwrap();
            let mut order: Vec<usize> = (0..8).collect();
            let mut rng = crate::rng::stream(seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let shuffled = InbDraws { values: inb.values.select_rows(&order), ..inb.clone() };
            let a = inb_moments(&inb).unwrap();
            let b = inb_moments(&shuffled).unwrap();
            prop_assert!((a.covariance - b.covariance).amax() < 1e-9);
        }
    }
}
