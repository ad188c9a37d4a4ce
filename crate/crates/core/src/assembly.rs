//! Global assembly of the bilinear and linear forms of the method.
//!
//! Every matrix is assembled in raw numbering first and then restricted to
//! the free dofs of its (test, trial) spaces. Local contributions are
//! computed per cell in parallel; the triplet list is sorted before
//! compression so the result does not depend on the schedule.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{CsrMatrix, LinalgError};
use crate::mesh::Point;
use crate::quadrature::{EdgeRule, TriangleRule};
use crate::spaces::{BoundaryCondition, CellBasis, DofSpace, ElementKind, SpaceError};

type Triplets = Vec<(usize, usize, f64)>;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("spaces live on different meshes")]
    MeshMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Matrix of a bilinear form over the free dofs of (test, trial).
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub matrix: CsrMatrix,
    /// Same form in raw numbering, constrained dofs included.
    pub raw: CsrMatrix,
    pub symmetric: bool,
}

impl AssembledForm {
    fn from_triplets(
        test: &DofSpace,
        trial: &DofSpace,
        triplets: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> Self {
        let free: Vec<(usize, usize, f64)> = triplets
            .iter()
            .filter_map(|&(i, j, v)| Some((test.free_index(i)?, trial.free_index(j)?, v)))
            .collect();
        Self {
            matrix: CsrMatrix::from_triplets(test.n_free(), trial.n_free(), free),
            raw: CsrMatrix::from_triplets(test.n_raw(), trial.n_raw(), triplets),
            symmetric,
        }
    }

    /// `self + s * other`, for forms on the same pair of spaces.
    pub fn add_scaled(&self, other: &AssembledForm, s: f64) -> Result<Self, AssemblyError> {
        Ok(Self {
            matrix: self.matrix.add_scaled(&other.matrix, s)?,
            raw: self.raw.add_scaled(&other.raw, s)?,
            symmetric: self.symmetric && other.symmetric,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            matrix: self.matrix.scaled(s),
            raw: self.raw.scaled(s),
            symmetric: self.symmetric,
        }
    }
}

fn require(
    space: &DofSpace,
    expected: &'static str,
    ok: &[ElementKind],
) -> Result<(), AssemblyError> {
    if ok.contains(&space.element()) {
        Ok(())
    } else {
        Err(SpaceError::WrongElement {
            expected,
            got: space.element(),
        }
        .into())
    }
}

fn same_mesh(a: &DofSpace, b: &DofSpace) -> Result<(), AssemblyError> {
    if a.same_mesh(b) {
        Ok(())
    } else {
        Err(AssemblyError::MeshMismatch)
    }
}

/// Scalar function index and component of local dof `j`.
fn split(basis: &CellBasis, j: usize) -> (usize, usize) {
    if basis.components == 1 {
        (j, 0)
    } else {
        (j / basis.components, j % basis.components)
    }
}

/// Loop over cells, collecting `local(k, test_basis, trial_basis)` (row-major,
/// test x trial) into global triplets.
fn assemble_cells<F>(
    test: &DofSpace,
    trial: &DofSpace,
    local: F,
) -> Result<Vec<(usize, usize, f64)>, AssemblyError>
where
    F: Fn(usize, &CellBasis, &CellBasis) -> Vec<f64> + Sync,
{
    same_mesh(test, trial)?;
    let same = std::ptr::eq(test, trial);
    let chunks: Result<Vec<Triplets>, AssemblyError> = (0..test.mesh.n_cells())
        .into_par_iter()
        .map(|k| {
            let bt = test.local_basis(k)?;
            let bs = if same {
                bt.clone()
            } else {
                trial.local_basis(k)?
            };
            let m = local(k, &bt, &bs);
            let rows = test.cell_dofs(k);
            let cols = trial.cell_dofs(k);
            let mut t = Vec::with_capacity(rows.len() * cols.len());
            for (a, &r) in rows.iter().enumerate() {
                for (b, &c) in cols.iter().enumerate() {
                    let v = m[a * cols.len() + b];
                    if v != 0.0 {
                        t.push((r, c, v));
                    }
                }
            }
            Ok(t)
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Loop over boundary edges with the basis of the adjacent cell.
/// `local(e, k, basis, points, weights)` returns a square local matrix.
fn assemble_boundary<F>(
    space: &DofSpace,
    local: F,
) -> Result<Vec<(usize, usize, f64)>, AssemblyError>
where
    F: Fn(usize, &CellBasis, &[Point], &[f64]) -> Vec<f64> + Sync,
{
    let mesh = &space.mesh;
    let rule = EdgeRule::gauss(2);
    let edges: Vec<usize> = mesh.boundary_edges().collect();
    let chunks: Result<Vec<Triplets>, AssemblyError> = edges
        .par_iter()
        .map(|&e| {
            let k = mesh.edge_cells[e].0;
            let basis = space.local_basis(k)?;
            let [a, b] = mesh.edges[e];
            let pts = rule.map(mesh.vertices[a], mesh.vertices[b]);
            let w: Vec<f64> = rule
                .weights
                .iter()
                .map(|w| w * mesh.edge_length[e])
                .collect();
            let m = local(e, &basis, &pts, &w);
            let dofs = space.cell_dofs(k);
            let mut t = Vec::with_capacity(dofs.len() * dofs.len());
            for (i, &r) in dofs.iter().enumerate() {
                for (j, &c) in dofs.iter().enumerate() {
                    let v = m[i * dofs.len() + j];
                    if v != 0.0 {
                        t.push((r, c, v));
                    }
                }
            }
            Ok(t)
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

fn frobenius(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

fn dot2(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `a_h(u, v) = (hess_h u, hess_h v)` on a Morley space.
pub fn assemble_ah(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    require(space, "Morley", &[ElementKind::Morley])?;
    let mesh = &space.mesh;
    let t = assemble_cells(space, space, |k, bt, _| {
        let h = bt.hessians();
        let n = h.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = mesh.cell_area[k] * frobenius(&h[i], &h[j]);
            }
        }
        m
    })?;
    Ok(AssembledForm::from_triplets(space, space, t, true))
}

/// `b_h(u, v) = (grad_h u, grad_h v)`; componentwise for vector spaces.
pub fn assemble_bh(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    require(
        space,
        "Morley, Lagrange or Crouzeix-Raviart",
        &[
            ElementKind::Morley,
            ElementKind::LagrangeP1,
            ElementKind::LagrangeP2,
            ElementKind::CrVector,
        ],
    )?;
    let mesh = &space.mesh;
    let rule = TriangleRule::degree4();
    let t = assemble_cells(space, space, |k, bt, _| {
        let pts = rule.map(&mesh.cell_points(k));
        let tab = bt.tabulate(&pts);
        let n = bt.len();
        let mut m = vec![0.0; n * n];
        for (q, w) in rule.weights.iter().enumerate() {
            let wq = w * mesh.cell_area[k];
            for i in 0..n {
                let (fi, ci) = split(bt, i);
                for j in 0..n {
                    let (fj, cj) = split(bt, j);
                    if ci == cj {
                        m[i * n + j] += wq * dot2(tab.grads[q][fi], tab.grads[q][fj]);
                    }
                }
            }
        }
        m
    })?;
    Ok(AssembledForm::from_triplets(space, space, t, true))
}

/// L2 mass matrix of a scalar or vector space.
pub fn assemble_mass(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    let mesh = &space.mesh;
    let rule = TriangleRule::degree4();
    let t = assemble_cells(space, space, |k, bt, _| {
        let pts = rule.map(&mesh.cell_points(k));
        let tab = bt.tabulate(&pts);
        let n = bt.len();
        let mut m = vec![0.0; n * n];
        for (q, w) in rule.weights.iter().enumerate() {
            let wq = w * mesh.cell_area[k];
            for i in 0..n {
                let (fi, ci) = split(bt, i);
                for j in 0..n {
                    let (fj, cj) = split(bt, j);
                    if ci == cj {
                        m[i * n + j] += wq * tab.values[q][fi] * tab.values[q][fj];
                    }
                }
            }
        }
        m
    })?;
    Ok(AssembledForm::from_triplets(space, space, t, true))
}

/// Vector Crouzeix-Raviart mass matrix.
pub fn assemble_mass_cr(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    require(space, "Crouzeix-Raviart", &[ElementKind::CrVector])?;
    assemble_mass(space)
}

/// Diagonal matrix of cell areas on the piecewise constants.
pub fn assemble_mass_p0(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    require(space, "P0", &[ElementKind::P0MeanZero])?;
    let t = (0..space.mesh.n_cells())
        .map(|k| (k, k, space.mesh.cell_area[k]))
        .collect();
    Ok(AssembledForm::from_triplets(space, space, t, true))
}

/// Boundary terms of the Nitsche form, returned as
/// `(consistency, penalty)` with
/// `consistency(u, v) = sum_F (d_nn u, d_n v)_F + (d_n u, d_nn v)_F` and
/// `penalty(u, v) = sum_F h_F^{-1} (d_n u, d_n v)_F`.
pub fn assemble_nitsche_boundary(
    space: &DofSpace,
) -> Result<(AssembledForm, AssembledForm), AssemblyError> {
    require(space, "Morley", &[ElementKind::Morley])?;
    let mesh = &space.mesh;
    let consistency = assemble_boundary(space, |e, basis, pts, w| {
        let n = mesh.edge_normal[e];
        let hess = basis.hessians();
        let dnn: Vec<f64> = hess
            .iter()
            .map(|h| {
                n[0] * (h[0][0] * n[0] + h[0][1] * n[1]) + n[1] * (h[1][0] * n[0] + h[1][1] * n[1])
            })
            .collect();
        let nb = basis.len();
        let mut m = vec![0.0; nb * nb];
        for (p, wq) in pts.iter().zip(w) {
            let dn: Vec<f64> = basis.grads(*p).iter().map(|g| dot2(*g, n)).collect();
            for i in 0..nb {
                for j in 0..nb {
                    m[i * nb + j] += wq * (dnn[j] * dn[i] + dn[j] * dnn[i]);
                }
            }
        }
        m
    })?;
    let penalty = assemble_boundary(space, |e, basis, pts, w| {
        let n = mesh.edge_normal[e];
        let nb = basis.len();
        let inv_h = 1.0 / mesh.edge_length[e];
        let mut m = vec![0.0; nb * nb];
        for (p, wq) in pts.iter().zip(w) {
            let dn: Vec<f64> = basis.grads(*p).iter().map(|g| dot2(*g, n)).collect();
            for i in 0..nb {
                for j in 0..nb {
                    m[i * nb + j] += wq * inv_h * dn[i] * dn[j];
                }
            }
        }
        m
    })?;
    Ok((
        AssembledForm::from_triplets(space, space, consistency, true),
        AssembledForm::from_triplets(space, space, penalty, true),
    ))
}

/// Nitsche form `a_h - consistency + sigma * penalty`.
pub fn assemble_nitsche_ah(space: &DofSpace, sigma: f64) -> Result<AssembledForm, AssemblyError> {
    if !(sigma > 0.0) {
        return Err(AssemblyError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let a = assemble_ah(space)?;
    let (c, p) = assemble_nitsche_boundary(space)?;
    a.add_scaled(&c, -1.0)?.add_scaled(&p, sigma)
}

/// Gram matrix of the penalized broken H2 norm:
/// `|v|_{2,h}^2 + sum_F h_F^{-1} ||d_n v||_F^2`.
pub fn assemble_h2_penalized_gram(space: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    let a = assemble_ah(space)?;
    let (_, p) = assemble_nitsche_boundary(space)?;
    a.add_scaled(&p, 1.0)
}

/// Tangential Nitsche form on vector Crouzeix-Raviart fields:
/// `(grad phi, grad psi) - sum_F [(d_n(phi.t), psi.t) + (phi.t, d_n(psi.t))]
///  + sum_F sigma / h_F (phi.t, psi.t)`.
pub fn assemble_ch(space: &DofSpace, sigma: f64) -> Result<AssembledForm, AssemblyError> {
    require(space, "Crouzeix-Raviart", &[ElementKind::CrVector])?;
    if space.kind.bc != BoundaryCondition::CrNormalZero {
        return Err(AssemblyError::InvalidParameter(format!(
            "c_h needs the normal-zero Crouzeix-Raviart space, got {:?}",
            space.kind.bc
        )));
    }
    if !(sigma > 0.0) {
        return Err(AssemblyError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let mesh = &space.mesh;
    let stiffness = assemble_bh(space)?;
    let boundary = assemble_boundary(space, |e, basis, pts, w| {
        let n = mesh.edge_normal[e];
        let t = mesh.edge_tangent[e];
        let inv_h = 1.0 / mesh.edge_length[e];
        let nb = basis.len();
        let mut m = vec![0.0; nb * nb];
        for (p, wq) in pts.iter().zip(w) {
            let vals = basis.values(*p);
            let grads = basis.grads(*p);
            // Tangential trace and its normal derivative for each local dof.
            let tr: Vec<(f64, f64)> = (0..nb)
                .map(|j| {
                    let (f, c) = split(basis, j);
                    (vals[f] * t[c], dot2(grads[f], n) * t[c])
                })
                .collect();
            for i in 0..nb {
                for j in 0..nb {
                    m[i * nb + j] += wq
                        * (-tr[j].1 * tr[i].0 - tr[j].0 * tr[i].1
                            + sigma * inv_h * tr[j].0 * tr[i].0);
                }
            }
        }
        m
    })?;
    let boundary = AssembledForm::from_triplets(space, space, boundary, true);
    stiffness.add_scaled(&boundary, 1.0)
}

/// `B[q, psi] = (div_h psi, q)` with rows on P0 and columns on the CR space.
pub fn assemble_div_cr_p0(cr: &DofSpace, p0: &DofSpace) -> Result<AssembledForm, AssemblyError> {
    require(cr, "Crouzeix-Raviart", &[ElementKind::CrVector])?;
    require(p0, "P0", &[ElementKind::P0MeanZero])?;
    let mesh = &cr.mesh;
    let t = assemble_cells(p0, cr, |k, _, bs| {
        let g = bs.grads(mesh.cell_centroid(k));
        (0..bs.len())
            .map(|j| {
                let (f, c) = split(bs, j);
                mesh.cell_area[k] * g[f][c]
            })
            .collect()
    })?;
    Ok(AssembledForm::from_triplets(p0, cr, t, false))
}

/// `C[psi, v] = (psi, curl_h v)` with `curl v = (d_y v, -d_x v)`; rows on
/// the CR space, columns on the Morley space.
pub fn assemble_curl_coupling(
    cr: &DofSpace,
    morley: &DofSpace,
) -> Result<AssembledForm, AssemblyError> {
    require(cr, "Crouzeix-Raviart", &[ElementKind::CrVector])?;
    require(morley, "Morley", &[ElementKind::Morley])?;
    let mesh = &cr.mesh;
    let rule = TriangleRule::degree4();
    let t = assemble_cells(cr, morley, |k, bt, bs| {
        let pts = rule.map(&mesh.cell_points(k));
        let ta = bt.tabulate(&pts);
        let tb = bs.tabulate(&pts);
        let (nt, ns) = (bt.len(), bs.len());
        let mut m = vec![0.0; nt * ns];
        for (q, w) in rule.weights.iter().enumerate() {
            let wq = w * mesh.cell_area[k];
            for i in 0..nt {
                let (f, c) = split(bt, i);
                for j in 0..ns {
                    let g = tb.grads[q][j];
                    let curl = if c == 0 { g[1] } else { -g[0] };
                    m[i * ns + j] += wq * ta.values[q][f] * curl;
                }
            }
        }
        m
    })?;
    Ok(AssembledForm::from_triplets(cr, morley, t, false))
}

/// `G[v, w] = (grad w, grad_h v)` with rows on the Morley space and columns
/// on the Lagrange space.
pub fn assemble_grad_coupling(
    morley: &DofSpace,
    lagrange: &DofSpace,
) -> Result<AssembledForm, AssemblyError> {
    require(morley, "Morley", &[ElementKind::Morley])?;
    require(
        lagrange,
        "Lagrange",
        &[ElementKind::LagrangeP1, ElementKind::LagrangeP2],
    )?;
    let mesh = &morley.mesh;
    let rule = TriangleRule::degree4();
    let t = assemble_cells(morley, lagrange, |k, bt, bs| {
        let pts = rule.map(&mesh.cell_points(k));
        let ta = bt.tabulate(&pts);
        let tb = bs.tabulate(&pts);
        let (nt, ns) = (bt.len(), bs.len());
        let mut m = vec![0.0; nt * ns];
        for (q, w) in rule.weights.iter().enumerate() {
            let wq = w * mesh.cell_area[k];
            for i in 0..nt {
                for j in 0..ns {
                    m[i * ns + j] += wq * dot2(ta.grads[q][i], tb.grads[q][j]);
                }
            }
        }
        m
    })?;
    Ok(AssembledForm::from_triplets(morley, lagrange, t, false))
}

/// Load vector `(f, phi_i)` over the free dofs of a scalar space.
pub fn assemble_load(
    space: &DofSpace,
    f: impl Fn(Point) -> f64 + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    Ok(space.restrict(&assemble_load_raw(space, f)?))
}

/// Load vector in raw numbering.
pub fn assemble_load_raw(
    space: &DofSpace,
    f: impl Fn(Point) -> f64 + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    let mesh = &space.mesh;
    let rule = TriangleRule::degree6();
    let locals: Result<Vec<Vec<f64>>, AssemblyError> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|k| {
            let basis = space.local_basis(k)?;
            let pts = rule.map(&mesh.cell_points(k));
            let mut v = vec![0.0; basis.len()];
            for (p, w) in pts.iter().zip(&rule.weights) {
                let fw = f(*p) * w * mesh.cell_area[k];
                for (vi, phi) in v.iter_mut().zip(basis.values(*p)) {
                    *vi += fw * phi;
                }
            }
            Ok(v)
        })
        .collect();
    let mut out = vec![0.0; space.n_raw()];
    // Sequential scatter keeps the summation order fixed.
    for (k, v) in locals?.into_iter().enumerate() {
        for (&d, x) in space.cell_dofs(k).iter().zip(v) {
            out[d] += x;
        }
    }
    Ok(out)
}
