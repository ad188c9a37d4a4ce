//! Sparse storage, Krylov solvers and preconditioners.

pub mod amg;
pub mod block;
pub mod csr;
pub mod dense;
pub mod krylov;

pub use amg::{AmgHierarchy, AmgOptions};
pub use block::BlockFactorization;
pub use csr::CsrMatrix;
pub use dense::{dense_solve, min_eigenvalue, min_generalized_eigenvalue, DenseLu};
pub use krylov::{cg, gmres, KrylovOptions, SolveReport};

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix market line {line}: {message}")]
    MatrixMarket { line: usize, message: String },
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("breakdown at iteration {iteration} (value {value:e})")]
    Breakdown { iteration: usize, value: f64 },
    #[error("stagnation after {iteration} iterations at relative residual {relative_residual:e}")]
    Stagnation {
        iteration: usize,
        relative_residual: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `z = M^{-1} r` for some approximation `M` of the system matrix.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Debug, Clone)]
pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| {
                if d != 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(LinalgError::Singular)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { inv_diag })
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Exact solve through a dense LU factorization. Only for small systems.
#[derive(Debug, Clone)]
pub struct DirectPreconditioner {
    lu: DenseLu,
}

impl DirectPreconditioner {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        Ok(Self {
            lu: DenseLu::new(a.to_dense())?,
        })
    }
}

impl Preconditioner for DirectPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.lu.solve(r));
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
