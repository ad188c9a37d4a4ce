//! Smoothed-aggregation algebraic multigrid used as a V(1,1) preconditioner.

use super::{CsrMatrix, DenseLu, LinalgError, Preconditioner};

#[derive(Debug, Clone, PartialEq)]
pub struct AmgOptions {
    /// Strength threshold for `|a_ij| >= theta sqrt(a_ii a_jj)`.
    pub theta: f64,
    /// Jacobi damping for prolongator smoothing.
    pub omega: f64,
    /// Divide `omega` by a power-iteration estimate of `rho(D^-1 A)`.
    pub scale_omega_by_rho: bool,
    /// Levels with at most this many unknowns are solved directly.
    pub max_coarse: usize,
    pub max_levels: usize,
    /// Vector the tentative prolongator reproduces exactly; ones if `None`.
    pub near_nullspace: Option<Vec<f64>>,
}

impl Default for AmgOptions {
    fn default() -> Self {
        Self {
            theta: 0.08,
            omega: 2.0 / 3.0,
            scale_omega_by_rho: false,
            max_coarse: 64,
            max_levels: 25,
            near_nullspace: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    a: CsrMatrix,
    p: CsrMatrix,
    r: CsrMatrix,
    inv_diag: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AmgHierarchy {
    levels: Vec<Level>,
    coarse_n: usize,
    coarse: DenseLu,
    fine_nnz: usize,
    total_nnz: usize,
}

impl AmgHierarchy {
    pub fn new(a: &CsrMatrix, opts: &AmgOptions) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::ShapeMismatch {
                left: (a.nrows(), a.ncols()),
                right: (a.ncols(), a.nrows()),
            });
        }
        if !(opts.theta >= 0.0) || !(opts.omega > 0.0) {
            return Err(LinalgError::InvalidParameter(format!(
                "theta = {}, omega = {}",
                opts.theta, opts.omega
            )));
        }
        let mut b = match &opts.near_nullspace {
            Some(v) if v.len() == a.nrows() => v.clone(),
            Some(v) => {
                return Err(LinalgError::ShapeMismatch {
                    left: (a.nrows(), 1),
                    right: (v.len(), 1),
                })
            }
            None => vec![1.0; a.nrows()],
        };
        let fine_nnz = a.nnz();
        let mut total_nnz = fine_nnz;
        let mut levels = Vec::new();
        let mut current = a.clone();
        while current.nrows() > opts.max_coarse && levels.len() + 1 < opts.max_levels {
            let strength = strength_graph(&current, opts.theta);
            let (agg, n_agg) = standard_aggregation(&strength);
            if n_agg == 0 || n_agg >= current.nrows() {
                break;
            }
            let (t, b_coarse) = tentative_prolongator(&agg, n_agg, &b);
            let inv_diag = inverse_diagonal(&current)?;
            let mut omega = opts.omega;
            if opts.scale_omega_by_rho {
                omega /= spectral_radius_estimate(&current, &inv_diag);
            }
            let p = smooth_prolongator(&current, &inv_diag, &t, omega)?;
            let r = p.transpose();
            let coarse = r.matmul(&current.matmul(&p)?)?;
            total_nnz += coarse.nnz();
            levels.push(Level {
                a: current,
                p,
                r,
                inv_diag,
            });
            current = coarse;
            b = b_coarse;
        }
        let coarse_n = current.nrows();
        let coarse = DenseLu::new(current.to_dense())?;
        Ok(Self {
            levels,
            coarse_n,
            coarse,
            fine_nnz,
            total_nnz,
        })
    }

    /// Number of levels including the directly solved coarsest one.
    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// `(unknowns, nonzeros)` of every level, finest first.
    pub fn level_sizes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .levels
            .iter()
            .map(|l| (l.a.nrows(), l.a.nnz()))
            .collect();
        out.push((
            self.coarse_n,
            self.total_nnz - out.iter().map(|l| l.1).sum::<usize>(),
        ));
        out
    }

    pub fn coarsest_size(&self) -> usize {
        self.coarse_n
    }

    pub fn operator_complexity(&self) -> f64 {
        self.total_nnz as f64 / self.fine_nnz.max(1) as f64
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == self.levels.len() {
            x.copy_from_slice(&self.coarse.solve(b));
            return;
        }
        let lv = &self.levels[level];
        x.iter_mut().for_each(|v| *v = 0.0);
        gauss_seidel(&lv.a, &lv.inv_diag, b, x, false);
        let mut res = lv.a.matvec(x);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let bc = lv.r.matvec(&res);
        let mut xc = vec![0.0; bc.len()];
        self.cycle(level + 1, &bc, &mut xc);
        let corr = lv.p.matvec(&xc);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        gauss_seidel(&lv.a, &lv.inv_diag, b, x, true);
    }
}

impl Preconditioner for AmgHierarchy {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

fn inverse_diagonal(a: &CsrMatrix) -> Result<Vec<f64>, LinalgError> {
    a.diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(LinalgError::NotPositiveDefinite)
            }
        })
        .collect()
}

/// One Gauss-Seidel sweep, forward or backward.
fn gauss_seidel(a: &CsrMatrix, inv_diag: &[f64], b: &[f64], x: &mut [f64], backward: bool) {
    let n = a.nrows();
    let mut sweep = |i: usize| {
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                s -= v * x[j];
            }
        }
        x[i] = s * inv_diag[i];
    };
    if backward {
        (0..n).rev().for_each(&mut sweep);
    } else {
        (0..n).for_each(&mut sweep);
    }
}

/// Strong off-diagonal neighbours of every node.
fn strength_graph(a: &CsrMatrix, theta: f64) -> Vec<Vec<usize>> {
    let diag = a.diagonal();
    (0..a.nrows())
        .map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter()
                .zip(vals)
                .filter(|(&j, &v)| {
                    j != i && v.abs() >= theta * (diag[i] * diag[j]).abs().sqrt() && v != 0.0
                })
                .map(|(&j, _)| j)
                .collect()
        })
        .collect()
}

const NONE: usize = usize::MAX;

/// Three-pass greedy aggregation. Returns the aggregate of every node and
/// the number of aggregates. Nodes without strong neighbours stay
/// unaggregated (`NONE`) and are left to the smoother.
fn standard_aggregation(strength: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = strength.len();
    let mut agg = vec![NONE; n];
    let mut count = 0;

    // Seed aggregates from nodes whose whole neighbourhood is still free.
    for i in 0..n {
        if agg[i] != NONE || strength[i].is_empty() {
            continue;
        }
        if strength[i].iter().all(|&j| agg[j] == NONE) {
            agg[i] = count;
            for &j in &strength[i] {
                agg[j] = count;
            }
            count += 1;
        }
    }

    // Attach leftovers to a neighbouring aggregate from the first pass.
    let first = agg.clone();
    for i in 0..n {
        if agg[i] != NONE {
            continue;
        }
        if let Some(&j) = strength[i].iter().find(|&&j| first[j] != NONE) {
            agg[i] = first[j];
        }
    }

    for i in 0..n {
        if agg[i] != NONE || strength[i].is_empty() {
            continue;
        }
        agg[i] = count;
        for &j in &strength[i] {
            if agg[j] == NONE {
                agg[j] = count;
            }
        }
        count += 1;
    }
    (agg, count)
}

/// Piecewise prolongator reproducing `b`, with orthonormal columns.
fn tentative_prolongator(agg: &[usize], n_agg: usize, b: &[f64]) -> (CsrMatrix, Vec<f64>) {
    let mut norm2 = vec![0.0; n_agg];
    let mut size = vec![0usize; n_agg];
    for (i, &g) in agg.iter().enumerate().filter(|(_, &g)| g != NONE) {
        norm2[g] += b[i] * b[i];
        size[g] += 1;
    }
    let fallback: Vec<bool> = norm2.iter().map(|&s| s == 0.0).collect();
    let mut b_coarse = vec![0.0; n_agg];
    for g in 0..n_agg {
        b_coarse[g] = if fallback[g] {
            (size[g] as f64).sqrt()
        } else {
            norm2[g].sqrt()
        };
    }
    let triplets = agg
        .iter()
        .enumerate()
        .filter(|(_, &g)| g != NONE)
        .map(|(i, &g)| {
            let v = if fallback[g] { 1.0 } else { b[i] };
            (i, g, v / b_coarse[g])
        })
        .collect();
    (
        CsrMatrix::from_triplets(agg.len(), n_agg, triplets),
        b_coarse,
    )
}

fn smooth_prolongator(
    a: &CsrMatrix,
    inv_diag: &[f64],
    t: &CsrMatrix,
    omega: f64,
) -> Result<CsrMatrix, LinalgError> {
    let mut scaled = a.clone();
    scaled.scale_rows(inv_diag);
    let at = scaled.matmul(t)?;
    t.add_scaled(&at, -omega)
}

fn spectral_radius_estimate(a: &CsrMatrix, inv_diag: &[f64]) -> f64 {
    let n = a.nrows();
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0)
        .collect();
    let mut rho = 1.0;
    for _ in 0..20 {
        let mut w = a.matvec(&v);
        for (wi, di) in w.iter_mut().zip(inv_diag) {
            *wi *= di;
        }
        let nw = super::norm2(&w);
        let nv = super::norm2(&v);
        if nw == 0.0 || nv == 0.0 {
            break;
        }
        rho = nw / nv;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    rho
}
