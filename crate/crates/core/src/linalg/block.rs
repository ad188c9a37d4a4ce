//! Approximate block factorization for Brinkman saddle systems
//! `[[A, B^T], [B, 0]]` with a diagonal pressure mass matrix.
//!
//! The preconditioner is `L U^{-1}` with `U = [[A, -B^T], [0, Mt]]`,
//! `L = [[I, 0], [Mt^{-1} B, -I]]` and `Mt = alpha eps^{-2} M`.

use super::{CsrMatrix, LinalgError, Preconditioner};

#[derive(Debug, Clone)]
pub struct BlockFactorization<P> {
    a_inv: P,
    b: CsrMatrix,
    bt: CsrMatrix,
    mass: Vec<f64>,
    mtilde_inv: Vec<f64>,
    project_mean: bool,
}

impl<P: Preconditioner> BlockFactorization<P> {
    /// `a_inv` approximates the inverse of the velocity block; `mass` must be diagonal.
    pub fn new(
        a_inv: P,
        b: &CsrMatrix,
        mass: &CsrMatrix,
        eps: f64,
        alpha: f64,
    ) -> Result<Self, LinalgError> {
        if !(eps > 0.0) {
            return Err(LinalgError::InvalidParameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(LinalgError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if mass.nrows() != b.nrows() || mass.ncols() != b.nrows() {
            return Err(LinalgError::ShapeMismatch {
                left: (mass.nrows(), mass.ncols()),
                right: (b.nrows(), b.nrows()),
            });
        }
        if mass.triplets().any(|(i, j, v)| i != j && v != 0.0) {
            return Err(LinalgError::InvalidParameter(
                "pressure mass matrix is not diagonal".into(),
            ));
        }
        let diag = mass.diagonal();
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let scale = alpha / (eps * eps);
        let mtilde_inv = diag.iter().map(|d| 1.0 / (scale * d)).collect();
        Ok(Self {
            a_inv,
            b: b.clone(),
            bt: b.transpose(),
            mass: diag,
            mtilde_inv,
            project_mean: true,
        })
    }

    /// Keep the pressure output as computed instead of projecting it to zero mean.
    pub fn without_mean_projection(mut self) -> Self {
        self.project_mean = false;
        self
    }

    pub fn n_velocity(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.nrows()
    }
}

impl<P: Preconditioner> Preconditioner for BlockFactorization<P> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nu = self.n_velocity();
        let (ru, rp) = r.split_at(nu);
        let (zu, zp) = z.split_at_mut(nu);

        let yp: Vec<f64> = rp
            .iter()
            .zip(&self.mtilde_inv)
            .map(|(a, b)| a * b)
            .collect();
        let mut rhs = self.bt.matvec(&yp);
        for (v, ri) in rhs.iter_mut().zip(ru) {
            *v += ri;
        }
        self.a_inv.apply(&rhs, zu);

        let byu = self.b.matvec(zu);
        for i in 0..zp.len() {
            zp[i] = self.mtilde_inv[i] * byu[i] - yp[i];
        }
        if self.project_mean {
            let total: f64 = self.mass.iter().sum();
            let mean: f64 = zp.iter().zip(&self.mass).map(|(a, m)| a * m).sum::<f64>() / total;
            zp.iter_mut().for_each(|v| *v -= mean);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gmres, DirectPreconditioner, IdentityPreconditioner, KrylovOptions};

    #[test]
    fn rejects_bad_parameters() {
        let b = CsrMatrix::zeros(2, 3);
        let m = CsrMatrix::identity(2);
        assert!(BlockFactorization::new(IdentityPreconditioner, &b, &m, 0.0, 2.0).is_err());
        assert!(BlockFactorization::new(IdentityPreconditioner, &b, &m, 1.0, 0.0).is_err());
        let full = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 0.5), (1, 1, 1.0)]);
        assert!(BlockFactorization::new(IdentityPreconditioner, &b, &full, 1.0, 2.0).is_err());
    }

    #[test]
    fn zero_maps_to_zero() {
        let b = CsrMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, -1.0)]);
        let p = BlockFactorization::new(
            IdentityPreconditioner,
            &b,
            &CsrMatrix::identity(1),
            1.0,
            2.0,
        )
        .unwrap();
        let mut z = vec![7.0; 3];
        p.apply(&[0.0; 3], &mut z);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoupled_blocks_converge_immediately() {
        let a = CsrMatrix::from_diagonal(&[2.0, 3.0, 5.0]);
        let b = CsrMatrix::zeros(2, 3);
        let m = CsrMatrix::identity(2);
        let direct = DirectPreconditioner::new(&a).unwrap();
        let p = BlockFactorization::new(direct, &b, &m, 1.0, 2.0)
            .unwrap()
            .without_mean_projection();
        // The pressure block of the system is singular; only the velocity part is tested.
        let sys = CsrMatrix::block2x2(&a, Some(&b.transpose()), Some(&b), None, 2).unwrap();
        let rhs = vec![1.0, 2.0, 3.0, 0.0, 0.0];
        let (x, rep) = gmres(&sys, &rhs, &p, &KrylovOptions::default()).unwrap();
        assert!(rep.converged && rep.iterations <= 2, "{rep:?}");
        assert!((x[0] - 0.5).abs() < 1e-12);
    }
}
