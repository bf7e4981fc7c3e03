//! Dense symmetric-matrix utilities on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used for symmetry and eigenvalue-sign checks.
pub const SPD_TOLERANCE: f64 = 1e-10;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn column_means(values: &DMatrix<f64>) -> DVector<f64> {
    let n = values.nrows() as f64;
    DVector::from_iterator(
        values.ncols(),
        values.column_iter().map(|c| c.iter().sum::<f64>() / n),
    )
}

/// Unbiased sample covariance of the rows of `values`.
pub fn sample_covariance(values: &DMatrix<f64>) -> DMatrix<f64> {
    let n = values.nrows();
    let p = values.ncols();
    let means = column_means(values);
    let mut centered = values.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    symmetrize(&mut cov);
    debug_assert_eq!(cov.nrows(), p);
    cov
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn check_square_symmetric(sigma: &DMatrix<f64>, what: &str) -> Result<f64> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::invalid(format!("{what} is not square")));
    }
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    let scale = max_abs(sigma);
    let asym = max_abs(&(sigma - sigma.transpose()));
    if asym > SPD_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} is not symmetric (asymmetry {asym:e})"
        )));
    }
    Ok(scale)
}

fn eigen(sigma: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut s = sigma.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let mut out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Principal square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues down to `-1e-10 * max|Σ|` are treated as round-off and
/// clipped to zero; anything more negative is an error.
pub fn matrix_sqrt_spd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = check_square_symmetric(sigma, "covariance")?;
    let eig = eigen(sigma);
    let floor = -SPD_TOLERANCE * scale;
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::NotPositiveDefinite(format!(
            "negative eigenvalue {bad:e}"
        )));
    }
    Ok(rebuild(&eig, |l| l.max(0.0).sqrt()))
}

/// Inverse principal square root restricted to the range of `sigma`
/// (Moore-Penrose sense). Returns the matrix and the numerical rank.
pub fn pseudo_inverse_sqrt(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let scale = check_square_symmetric(sigma, "covariance")?;
    let eig = eigen(sigma);
    let cutoff = SPD_TOLERANCE * scale;
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < -cutoff) {
        return Err(Error::NotPositiveDefinite(format!(
            "negative eigenvalue {bad:e}"
        )));
    }
    let rank = eig.eigenvalues.iter().filter(|&&l| l > cutoff).count();
    let inv = rebuild(&eig, |l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 });
    Ok((inv, rank))
}

/// Orthogonal projector onto the numerical null space of `sigma`.
pub fn null_space_projector(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = max_abs(sigma);
    let eig = eigen(sigma);
    let cutoff = SPD_TOLERANCE * scale;
    rebuild(&eig, |l| if l > cutoff { 0.0 } else { 1.0 })
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clipped at zero.
pub fn project_psd(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = eigen(sigma);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        let mut s = sigma.clone();
        symmetrize(&mut s);
        return s;
    }
    rebuild(&eig, |l| l.max(0.0))
}

/// A factor `F` with `F Fᵀ = cov`, lower-triangular Cholesky when the
/// matrix is positive definite, otherwise a symmetric root (PSD case).
pub fn sampling_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
        return Ok(chol.l());
    }
    matrix_sqrt_spd(cov)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols() && nalgebra::Cholesky::new(m.clone()).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_spd(&id).unwrap() - &id).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_sqrt_spd(&d).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((r - want).amax() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_indefinite_and_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            matrix_sqrt_spd(&m),
            Err(Error::NotPositiveDefinite(_))
        ));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matrix_sqrt_spd(&a).is_err());
    }

    #[test]
    fn projection_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = project_psd(&m);
        let eig = SymmetricEigen::new(p.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        // eigenvalues 3 and -1 -> keep only the 3 component
        assert!((p[(0, 0)] - 1.5).abs() < 1e-12 && (p[(0, 1)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_root_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        let (inv, rank) = pseudo_inverse_sqrt(&m).unwrap();
        assert_eq!(rank, 1);
        let root = matrix_sqrt_spd(&m).unwrap();
        // root * inv is the projector onto span{(1, 1)}
        let proj = &root * &inv;
        assert!((proj[(0, 0)] - 0.5).abs() < 1e-12 && (proj[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_double_loop() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 1.0, 4.0, 0.5, -1.0, 3.0]);
        let c = sample_covariance(&x);
        for a in 0..2 {
            for b in 0..2 {
                let ma: f64 = x.column(a).mean();
                let mb: f64 = x.column(b).mean();
                let mut s = 0.0;
                for r in 0..4 {
                    s += (x[(r, a)] - ma) * (x[(r, b)] - mb);
                }
                assert!((c[(a, b)] - s / 3.0).abs() < 1e-12);
            }
        }
    }
}
