//! Small dense kernels used as oracles and for coarse-grid solves.

use nalgebra::{DMatrix, DVector, LU};

use super::LinalgError;

/// LU factorization with partial pivoting, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    pub fn new(a: DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(LinalgError::ShapeMismatch {
                left: (a.nrows(), a.ncols()),
                right: (a.ncols(), a.nrows()),
            });
        }
        let scale = a.amax();
        let lu = a.lu();
        let u = lu.u();
        let min_pivot = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if n > 0 && !(min_pivot > (n as f64) * f64::EPSILON * scale) {
            return Err(LinalgError::Singular);
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        self.lu
            .solve(&rhs)
            .expect("factorization was checked to be nonsingular")
            .as_slice()
            .to_vec()
    }
}

/// Solve `A x = b` by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.nrows() {
        return Err(LinalgError::ShapeMismatch {
            left: (a.nrows(), a.ncols()),
            right: (b.len(), 1),
        });
    }
    Ok(DenseLu::new(a.clone())?.solve(b))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (a + a.transpose());
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `lambda` with `A v = lambda N v` for symmetric `A` and SPD `N`.
pub fn min_generalized_eigenvalue(a: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let chol = n
        .clone()
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.ncols()))
        .ok_or(LinalgError::Singular)?;
    let c = &linv * a * linv.transpose();
    Ok(min_eigenvalue(&c))
}

/// Cholesky succeeds.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.clone().cholesky().is_some()
}
