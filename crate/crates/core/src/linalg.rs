//! Dense linear algebra kernel: factorization of the design matrix,
//! Gram-inverse products, least squares, and whitening.
//!
//! Everything downstream (scores, samplers, estimators) works through
//! [`GramFactor`], which caches an orthogonal factorization of the design
//! matrix rather than forming and inverting the Gram matrix directly. The
//! inverse-score computation applies `(X^T X)^{-1}` twice, so squared
//! condition numbers are in play and the orthogonal route matters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance for the numerical rank check.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A dense n x d matrix of experiment vectors, one experiment per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    entries: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps a dense matrix, requiring `n >= d >= 1` and finite entries.
    ///
    /// Full numerical rank is verified later by [`factorize`], which is the
    /// only gateway to the operations that rely on it.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, d) = (entries.nrows(), entries.ncols());
        if d < 1 || n < d {
            return Err(Error::DimensionMismatch {
                expected: d.max(1),
                got: n,
                context: "design matrix needs n >= d >= 1",
            });
        }
        for col in 0..d {
            for row in 0..n {
                if !entries[(row, col)].is_finite() {
                    return Err(Error::NonFiniteEntry { row, col });
                }
            }
        }
        Ok(Self { entries })
    }

    /// Builds a design matrix from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rows.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0),
                context: "all rows must have the same length",
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, d, &flat))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// The i-th experiment vector as a column vector.
    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        self.entries.row(i).transpose()
    }
}

/// Estimated weight vector of the linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(pub DVector<f64>);

impl Weights {
    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Orthogonal factorization of a design matrix with everything derived from
/// the Gram matrix cached: `(X^T X)^{-1}`, `log det(X^T X)`, and pseudo-inverse
/// application.
#[derive(Debug, Clone)]
pub struct GramFactor {
    n: usize,
    d: usize,
    /// Thin orthonormal factor, n x d.
    q: DMatrix<f64>,
    /// Upper-triangular factor, d x d.
    r: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    log_det_gram: f64,
    sigma_min: f64,
    sigma_max: f64,
}

impl GramFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// The thin orthonormal factor of the design matrix.
    pub fn orthonormal_factor(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn log_det_gram(&self) -> f64 {
        self.log_det_gram
    }

    /// Smallest and largest singular values of the design matrix.
    pub fn singular_value_range(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    /// Applies the Moore-Penrose pseudo-inverse: `X^+ y = R^{-1} Q^T y`.
    pub fn apply_pseudo_inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: y.len(),
                context: "pseudo-inverse application",
            });
        }
        let qty = self.q.transpose() * y;
        self.r
            .solve_upper_triangular(&qty)
            .ok_or(Error::RankDeficient {
                sigma_min: 0.0,
                sigma_max: self.sigma_max,
                tol: DEFAULT_RANK_TOL,
            })
    }

    /// The pseudo-inverse `X^+ = R^{-1} Q^T` as an explicit d x n matrix.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(self.d, self.d))
            .expect("factorize guarantees an invertible triangular factor");
        r_inv * self.q.transpose()
    }
}

/// Factorizes a design matrix, verifying full numerical rank against
/// `rank_tol` (relative to the largest singular value).
pub fn factorize(x: &DesignMatrix, rank_tol: f64) -> Result<GramFactor> {
    let (n, d) = (x.n(), x.d());
    let svals = x.entries().clone().singular_values();
    let sigma_max = svals.iter().fold(0.0_f64, |a, &s| a.max(s));
    let sigma_min = svals.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    // Written so that NaN singular values fall into the error path.
    let full_rank = sigma_min > rank_tol * sigma_max;
    if !full_rank || sigma_max == 0.0 {
        return Err(Error::RankDeficient {
            sigma_min,
            sigma_max,
            tol: rank_tol,
        });
    }

    let qr = x.entries().clone().qr();
    let q = qr.q();
    let r = qr.r();

    // (X^T X)^{-1} = R^{-1} R^{-T} from X^T X = R^T R.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::RankDeficient {
            sigma_min,
            sigma_max,
            tol: rank_tol,
        })?;
    let mut gram_inverse = &r_inv * r_inv.transpose();
    symmetrize(&mut gram_inverse);

    let log_det_gram = 2.0 * (0..d).map(|i| r[(i, i)].abs().ln()).sum::<f64>();

    Ok(GramFactor {
        n,
        d,
        q,
        r,
        gram_inverse,
        log_det_gram,
        sigma_min,
        sigma_max,
    })
}

/// Least squares solution `argmin_w ||X w - y||^2` via the cached
/// orthogonal factorization.
pub fn least_squares(factor: &GramFactor, x: &DesignMatrix, y: &DVector<f64>) -> Result<Weights> {
    if x.n() != factor.n() || x.d() != factor.d() {
        return Err(Error::DimensionMismatch {
            expected: factor.n(),
            got: x.n(),
            context: "factor does not match design matrix",
        });
    }
    factor.apply_pseudo_inverse(y).map(Weights)
}

/// The residual vector `X w - y`.
pub fn residual(x: &DesignMatrix, w: &Weights, y: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != x.d() {
        return Err(Error::DimensionMismatch {
            expected: x.d(),
            got: w.len(),
            context: "weight vector length",
        });
    }
    if y.len() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: y.len(),
            context: "response vector length",
        });
    }
    Ok(x.entries() * w.vector() - y)
}

/// Whitens the design matrix: returns `U = X (X^T X)^{-1/2}` with
/// orthonormal columns, using the symmetric (eigendecomposition) square root.
pub fn whiten(x: &DesignMatrix, factor: &GramFactor) -> Result<DesignMatrix> {
    if x.n() != factor.n() || x.d() != factor.d() {
        return Err(Error::DimensionMismatch {
            expected: factor.n(),
            got: x.n(),
            context: "factor does not match design matrix",
        });
    }
    let mut gram = x.entries().transpose() * x.entries();
    symmetrize(&mut gram);
    let eigen = SymmetricEigen::new(gram);
    let lambda_max = eigen.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
    let positive = |l: f64| l > DEFAULT_RANK_TOL * DEFAULT_RANK_TOL * lambda_max;
    if eigen.eigenvalues.iter().any(|&l| !positive(l)) {
        return Err(Error::RankDeficient {
            sigma_min: eigen
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, &l| a.min(l)),
            sigma_max: lambda_max,
            tol: DEFAULT_RANK_TOL,
        });
    }
    let scaled = DMatrix::from_fn(x.d(), x.d(), |i, j| {
        eigen.eigenvectors[(i, j)] / eigen.eigenvalues[j].sqrt()
    });
    let inv_sqrt = scaled * eigen.eigenvectors.transpose();
    DesignMatrix::new(x.entries() * inv_sqrt)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_by_two() -> DesignMatrix {
        DesignMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    #[test]
    fn identity_factorization() {
        let x = DesignMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let diff = f.gram_inverse() - DMatrix::identity(2, 2);
        assert!(max_abs(&diff) < 1e-12);
        assert!(f.log_det_gram().abs() < 1e-12);
    }

    #[test]
    fn three_by_two_gram_inverse() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let expected =
            DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0]);
        assert!(max_abs(&(f.gram_inverse() - expected)) < 1e-12);
        assert!((f.log_det_gram() - 3.0_f64.ln()).abs() < 1e-12);

        // Multiply-back oracle: (X^T X) * gram_inverse = I.
        let gram = x.entries().transpose() * x.entries();
        let prod = gram * f.gram_inverse();
        assert!(max_abs(&(prod - DMatrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        match factorize(&x, DEFAULT_RANK_TOL) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_entry_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, f64::NAN, 1.0]);
        match DesignMatrix::new(m) {
            Err(Error::NonFiniteEntry { row: 1, col: 0 }) => {}
            other => panic!("expected NonFiniteEntry, got {other:?}"),
        }
    }

    #[test]
    fn least_squares_hand_example() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let w = least_squares(&f, &x, &y).unwrap();
        assert!((w.vector()[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((w.vector()[1] - 7.0 / 3.0).abs() < 1e-12);

        // Normal-equation oracle: X^T (X w - y) = 0.
        let r = residual(&x, &w, &y).unwrap();
        let normal = x.entries().transpose() * r;
        let bound = 1e-8 * x.entries().norm() * y.norm();
        assert!(normal.norm() <= bound);
    }

    #[test]
    fn least_squares_zero_response() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let w = least_squares(&f, &x, &DVector::zeros(3)).unwrap();
        assert!(w.vector().norm() < 1e-14);
    }

    #[test]
    fn least_squares_recovers_span_member() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let w0 = DVector::from_vec(vec![-2.5, 0.75]);
        let y = x.entries() * &w0;
        let w = least_squares(&f, &x, &y).unwrap();
        assert!((w.vector() - w0).norm() < 1e-10);
    }

    #[test]
    fn least_squares_dimension_mismatch() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            least_squares(&f, &x, &y),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_hand_example() {
        let x = three_by_two();
        let w = Weights(DVector::from_vec(vec![4.0 / 3.0, 7.0 / 3.0]));
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let r = residual(&x, &w, &y).unwrap();
        let expected = DVector::from_vec(vec![1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0]);
        assert!((r - expected).norm() < 1e-12);
    }

    #[test]
    fn residual_zero_weights_negates_response() {
        let x = three_by_two();
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let r = residual(&x, &Weights(DVector::zeros(2)), &y).unwrap();
        assert!((r + y).norm() < 1e-15);
    }

    #[test]
    fn whiten_diagonal_case() {
        let x = DesignMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let u = whiten(&x, &f).unwrap();
        assert!(max_abs(&(u.entries() - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn whiten_produces_orthonormal_columns() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let u = whiten(&x, &f).unwrap();
        let gram = u.entries().transpose() * u.entries();
        assert!(max_abs(&(gram - DMatrix::identity(2, 2))) < 1e-8);

        // Orthonormal input is left unchanged by whitening.
        let fu = factorize(&u, DEFAULT_RANK_TOL).unwrap();
        let u2 = whiten(&u, &fu).unwrap();
        assert!(max_abs(&(u2.entries() - u.entries())) < 1e-8);
    }

    #[test]
    fn whiten_preserves_column_span() {
        let x = three_by_two();
        let f = factorize(&x, DEFAULT_RANK_TOL).unwrap();
        let u = whiten(&x, &f).unwrap();
        // X X^+ equals U U^T on the whitened matrix.
        let proj_x = x.entries() * f.pseudo_inverse();
        let proj_u = u.entries() * u.entries().transpose();
        assert!(max_abs(&(proj_x - proj_u)) < 1e-8);
    }
}
