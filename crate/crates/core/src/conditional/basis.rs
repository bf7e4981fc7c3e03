//! Penalized regression bases for the conditional-expectation smoother.
//!
//! Every smooth term is built from cubic B-splines on uniform knots with a
//! second-order difference penalty, then reparameterized onto the range of
//! its penalty so the penalty becomes the identity. The penalty null spaces
//! (constants, linear terms, and for tensor products the bilinear term) are
//! carried explicitly as unpenalized polynomial columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cubic B-spline basis with `size` functions on uniform knots over [lo, hi].
#[derive(Debug, Clone)]
struct Marginal {
    lo: f64,
    step: f64,
    size: usize,
}

impl Marginal {
    fn new(lo: f64, hi: f64, size: usize) -> Self {
        debug_assert!(size >= 4 && hi > lo);
        Self {
            lo,
            step: (hi - lo) / (size - 3) as f64,
            size,
        }
    }

    /// Writes the `size` basis values at `x` into `out`.
    fn eval(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let u = (x - self.lo) / self.step;
        let last = (self.size - 4) as f64;
        let i = u.floor().clamp(0.0, last);
        let t = u - i;
        let i = i as usize;
        let s = 1.0 - t;
        out[i] = s * s * s / 6.0;
        out[i + 1] = (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0;
        out[i + 2] = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0;
        out[i + 3] = t * t * t / 6.0;
    }

    fn penalty(&self) -> DMatrix<f64> {
        let k = self.size;
        let mut d = DMatrix::zeros(k - 2, k);
        for r in 0..k - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        d.transpose() * d
    }
}

/// Map raw coefficients onto the penalty range with identity penalty.
fn range_transform(penalty: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(penalty.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-9 * top)
        .collect();
    let mut t = DMatrix::zeros(penalty.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        t.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    t
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[derive(Debug, Clone)]
struct Smooth {
    marginal: Marginal,
    transform: DMatrix<f64>,
}

impl Smooth {
    fn new(lo: f64, hi: f64, size: usize) -> Self {
        let marginal = Marginal::new(lo, hi, size);
        let transform = range_transform(&marginal.penalty());
        Self {
            marginal,
            transform,
        }
    }

    fn width(&self) -> usize {
        self.transform.ncols()
    }

    fn eval(&self, x: f64, raw: &mut [f64], out: &mut [f64]) {
        self.marginal.eval(x, raw);
        for (c, o) in out.iter_mut().enumerate() {
            *o = raw
                .iter()
                .zip(self.transform.column(c).iter())
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

#[derive(Debug, Clone)]
enum Term {
    Univariate {
        dim: usize,
        smooth: Smooth,
    },
    Tensor {
        a: Marginal,
        b: Marginal,
        transform: DMatrix<f64>,
    },
    Interaction {
        a: usize,
        b: usize,
        sa: Smooth,
        sb: Smooth,
    },
}

impl Term {
    fn width(&self) -> usize {
        match self {
            Term::Univariate { smooth, .. } => smooth.width(),
            Term::Tensor { transform, .. } => transform.ncols(),
            Term::Interaction { sa, sb, .. } => sa.width() * sb.width(),
        }
    }
}

/// Basis sizes for the three smoother layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSizes {
    /// B-spline count for a single focal parameter.
    pub univariate: usize,
    /// Marginal B-spline count of the two-parameter tensor product.
    pub tensor: usize,
    /// B-spline count of each additive smooth when there are 3-6 parameters.
    pub additive: usize,
    /// Marginal B-spline count of each pairwise interaction.
    pub interaction: usize,
}

impl Default for BasisSizes {
    fn default() -> Self {
        Self {
            univariate: 12,
            tensor: 7,
            additive: 8,
            interaction: 5,
        }
    }
}

pub const MAX_DIMENSION: usize = 6;

/// A fixed regression basis over standardized focal parameters.
#[derive(Debug, Clone)]
pub struct Basis {
    center: Vec<f64>,
    scale: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    terms: Vec<Term>,
    unpenalized: usize,
    penalized: usize,
}

impl Basis {
    /// Builds the basis; knot ranges span every row of `phi`.
    pub fn new(phi: &DMatrix<f64>, sizes: BasisSizes) -> Result<Self> {
        let d = phi.ncols();
        if d == 0 {
            return Err(Error::invalid(
                "conditional INB needs at least one focal parameter",
            ));
        }
        if d > MAX_DIMENSION {
            return Err(Error::invalid(format!(
                "at most {MAX_DIMENSION} focal parameters are supported, got {d}"
            )));
        }
        for s in [
            sizes.univariate,
            sizes.tensor,
            sizes.additive,
            sizes.interaction,
        ] {
            if s < 4 {
                return Err(Error::invalid("B-spline bases need at least 4 functions"));
            }
        }
        let n = phi.nrows() as f64;
        let mut center = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        let mut ranges = Vec::with_capacity(d);
        for (j, col) in phi.column_iter().enumerate() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::RankDeficientBasis(format!(
                    "focal column {j} has no variation"
                )));
            }
            let lo = (col.min() - m) / sd;
            let hi = (col.max() - m) / sd;
            center.push(m);
            scale.push(sd);
            ranges.push((lo, hi));
        }

        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|a| ((a + 1)..d).map(move |b| (a, b)))
            .collect();
        let mut terms = Vec::new();
        match d {
            1 => terms.push(Term::Univariate {
                dim: 0,
                smooth: Smooth::new(ranges[0].0, ranges[0].1, sizes.univariate),
            }),
            2 => {
                let a = Marginal::new(ranges[0].0, ranges[0].1, sizes.tensor);
                let b = Marginal::new(ranges[1].0, ranges[1].1, sizes.tensor);
                let ia = DMatrix::identity(a.size, a.size);
                let ib = DMatrix::identity(b.size, b.size);
                let penalty = kron(&a.penalty(), &ib) + kron(&ia, &b.penalty());
                let transform = range_transform(&penalty);
                terms.push(Term::Tensor { a, b, transform });
            }
            _ => {
                for (dim, &(lo, hi)) in ranges.iter().enumerate() {
                    terms.push(Term::Univariate {
                        dim,
                        smooth: Smooth::new(lo, hi, sizes.additive),
                    });
                }
                for &(a, b) in &pairs {
                    terms.push(Term::Interaction {
                        a,
                        b,
                        sa: Smooth::new(ranges[a].0, ranges[a].1, sizes.interaction),
                        sb: Smooth::new(ranges[b].0, ranges[b].1, sizes.interaction),
                    });
                }
            }
        }
        let unpenalized = d + pairs.len();
        let penalized = terms.iter().map(Term::width).sum();
        Ok(Self {
            center,
            scale,
            pairs,
            terms,
            unpenalized,
            penalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Unpenalized columns come first: linear terms then pairwise products.
    pub fn unpenalized_columns(&self) -> usize {
        self.unpenalized
    }

    #[cfg(test)]
    pub fn penalized_columns(&self) -> usize {
        self.penalized
    }

    pub fn columns(&self) -> usize {
        self.unpenalized + self.penalized
    }

    /// Evaluates the basis (without intercept) for rows `range` of `phi`.
    pub fn design(&self, phi: &DMatrix<f64>, rows: std::ops::Range<usize>) -> DMatrix<f64> {
        let p = self.columns();
        let d = self.dim();
        let mut out = DMatrix::zeros(rows.len(), p);
        let mut z = vec![0.0; d];
        let mut row = vec![0.0; p];
        let mut scratch = Scratch::new(self);
        for (r, s) in rows.enumerate() {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = (phi[(s, j)] - self.center[j]) / self.scale[j];
            }
            self.eval_row(&z, &mut row, &mut scratch);
            for (c, v) in row.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        out
    }

    fn eval_row(&self, z: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        let d = self.dim();
        out[..d].copy_from_slice(z);
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            out[d + i] = z[a] * z[b];
        }
        let mut at = self.unpenalized;
        for term in &self.terms {
            let w = term.width();
            let slot = &mut out[at..at + w];
            match term {
                Term::Univariate { dim, smooth } => {
                    smooth.eval(z[*dim], &mut scratch.raw_a[..smooth.marginal.size], slot);
                }
                Term::Tensor { a, b, transform } => {
                    let ra = &mut scratch.raw_a[..a.size];
                    let rb = &mut scratch.raw_b[..b.size];
                    a.eval(z[0], ra);
                    b.eval(z[1], rb);
                    let prod = &mut scratch.prod[..a.size * b.size];
                    for (i, va) in ra.iter().enumerate() {
                        for (j, vb) in rb.iter().enumerate() {
                            prod[i * b.size + j] = va * vb;
                        }
                    }
                    for (c, o) in slot.iter_mut().enumerate() {
                        *o = prod
                            .iter()
                            .zip(transform.column(c).iter())
                            .filter(|(p, _)| **p != 0.0)
                            .map(|(p, t)| p * t)
                            .sum();
                    }
                }
                Term::Interaction { a, b, sa, sb } => {
                    let wa = sa.width();
                    let wb = sb.width();
                    let (za, zb) = scratch.reduced.split_at_mut(wa);
                    sa.eval(z[*a], &mut scratch.raw_a[..sa.marginal.size], za);
                    sb.eval(z[*b], &mut scratch.raw_b[..sb.marginal.size], &mut zb[..wb]);
                    for i in 0..wa {
                        for j in 0..wb {
                            slot[i * wb + j] = za[i] * zb[j];
                        }
                    }
                }
            }
            at += w;
        }
    }

    /// Diagonal of the penalty matrix (0 unpenalized, 1 penalized).
    pub fn penalty_diagonal(&self) -> DVector<f64> {
        DVector::from_fn(
            self.columns(),
            |i, _| {
                if i < self.unpenalized {
                    0.0
                } else {
                    1.0
                }
            },
        )
    }
}

struct Scratch {
    raw_a: Vec<f64>,
    raw_b: Vec<f64>,
    prod: Vec<f64>,
    reduced: Vec<f64>,
}

impl Scratch {
    fn new(basis: &Basis) -> Self {
        let widest = basis
            .terms
            .iter()
            .map(|t| match t {
                Term::Univariate { smooth, .. } => smooth.marginal.size,
                Term::Tensor { a, b, .. } => a.size.max(b.size),
                Term::Interaction { sa, sb, .. } => sa.marginal.size.max(sb.marginal.size),
            })
            .max()
            .unwrap_or(4);
        Self {
            raw_a: vec![0.0; widest],
            raw_b: vec![0.0; widest],
            prod: vec![0.0; widest * widest],
            reduced: vec![0.0; 2 * widest],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bsplines_form_a_partition_of_unity() {
        let m = Marginal::new(-2.0, 3.0, 9);
        let mut out = vec![0.0; 9];
        for i in 0..=50 {
            let x = -2.0 + 5.0 * i as f64 / 50.0;
            m.eval(x, &mut out);
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|v| *v >= -1e-15));
        }
    }

    #[test]
    fn difference_penalty_null_space_is_linear() {
        let m = Marginal::new(0.0, 1.0, 8);
        let t = range_transform(&m.penalty());
        assert_eq!(t.ncols(), 6);
        let tensor = kron(&m.penalty(), &DMatrix::identity(8, 8))
            + kron(&DMatrix::identity(8, 8), &m.penalty());
        assert_eq!(range_transform(&tensor).ncols(), 60);
    }

    #[test]
    fn layout_by_dimension() {
        let phi1 = DMatrix::from_fn(50, 1, |i, _| i as f64);
        let b1 = Basis::new(&phi1, BasisSizes::default()).unwrap();
        assert_eq!((b1.unpenalized_columns(), b1.penalized_columns()), (1, 10));

        let phi2 = DMatrix::from_fn(50, 2, |i, j| ((i * (j + 3)) % 17) as f64);
        let b2 = Basis::new(&phi2, BasisSizes::default()).unwrap();
        assert_eq!((b2.unpenalized_columns(), b2.penalized_columns()), (3, 45));

        let phi4 = DMatrix::from_fn(50, 4, |i, j| ((i * (j + 3)) % 17) as f64);
        let b4 = Basis::new(&phi4, BasisSizes::default()).unwrap();
        assert_eq!(b4.unpenalized_columns(), 4 + 6);
        assert_eq!(b4.penalized_columns(), 4 * 6 + 6 * 9);
    }

    #[test]
    fn rejects_bad_dimensions_and_constant_columns() {
        assert!(Basis::new(&DMatrix::zeros(10, 0), BasisSizes::default()).is_err());
        assert!(Basis::new(&DMatrix::from_element(10, 7, 1.0), BasisSizes::default()).is_err());
        let constant = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 2.0 });
        assert!(matches!(
            Basis::new(&constant, BasisSizes::default()),
            Err(Error::RankDeficientBasis(_))
        ));
    }
}
