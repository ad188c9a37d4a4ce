//! Preconditioned conjugate gradients and restarted GMRES, both started
//! from the zero vector and stopped on the relative residual
//! `||b - A x|| / ||b||`.

use super::{dot, norm2, CsrMatrix, LinalgError, Preconditioner};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES cycle length.
    pub restart: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            restart: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    fn trivial() -> Self {
        Self {
            iterations: 0,
            relative_residual: 0.0,
            history: Vec::new(),
            converged: true,
        }
    }
}

fn check_square(a: &CsrMatrix, b: &[f64]) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() || b.len() != a.nrows() {
        return Err(LinalgError::ShapeMismatch {
            left: (a.nrows(), a.ncols()),
            right: (b.len(), 1),
        });
    }
    Ok(())
}

/// Preconditioned CG. Fails with [`LinalgError::Breakdown`] when a search
/// direction has non-positive curvature.
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    check_square(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveReport::trivial()));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut history = Vec::new();
    let mut rel = 1.0;
    for it in 1..=opts.max_iter {
        a.matvec_into(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(LinalgError::Breakdown {
                iteration: it,
                value: curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = norm2(&r) / bnorm;
        history.push(rel);
        if rel <= opts.tol {
            return Ok((
                x,
                SolveReport {
                    iterations: it,
                    relative_residual: rel,
                    history,
                    converged: true,
                },
            ));
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((
        x,
        SolveReport {
            iterations: opts.max_iter,
            relative_residual: rel,
            history,
            converged: false,
        },
    ))
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt.
///
/// Convergence is confirmed on the true residual at the end of each cycle.
/// Three consecutive cycles without progress are reported as stagnation.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    check_square(a, b)?;
    let n = b.len();
    let restart = opts.restart.max(1);
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveReport::trivial()));
    }
    let mut r = b.to_vec();
    let mut beta = bnorm;
    let mut history = Vec::new();
    let mut total = 0usize;
    let mut stalled_cycles = 0usize;
    let mut w = vec![0.0; n];

    loop {
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(restart);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut cols = 0;

        for j in 0..restart {
            let mut z = vec![0.0; n];
            m.apply(&v[j], &mut z);
            a.matvec_into(&z, &mut w);
            zs.push(z);
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm2(&w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                // A z = 0 with z != 0: singular operator on the Krylov space.
                return Err(LinalgError::Breakdown {
                    iteration: total + 1,
                    value: 0.0,
                });
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            cols = j + 1;
            let est = g[j + 1].abs() / bnorm;
            history.push(est);
            if est <= opts.tol || hnext == 0.0 || total >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|wk| wk / hnext).collect());
        }

        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let s: f64 = (i + 1..cols).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&zs) {
            for (xk, zk) in x.iter_mut().zip(zi) {
                *xk += yi * zk;
            }
        }
        let ax = a.matvec(&x);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        let new_beta = norm2(&r);
        let rel = new_beta / bnorm;
        if let Some(last) = history.last_mut() {
            *last = rel;
        }
        if rel <= opts.tol {
            return Ok((
                x,
                SolveReport {
                    iterations: total,
                    relative_residual: rel,
                    history,
                    converged: true,
                },
            ));
        }
        if total >= opts.max_iter {
            return Ok((
                x,
                SolveReport {
                    iterations: total,
                    relative_residual: rel,
                    history,
                    converged: false,
                },
            ));
        }
        if new_beta >= beta * (1.0 - 1e-12) {
            stalled_cycles += 1;
            if stalled_cycles >= 3 {
                return Err(LinalgError::Stagnation {
                    iteration: total,
                    relative_residual: rel,
                });
            }
        } else {
            stalled_cycles = 0;
        }
        beta = new_beta;
    }
}
