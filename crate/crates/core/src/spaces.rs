//! Discrete spaces: Lagrange P1/P2, Morley, vector Crouzeix-Raviart and
//! piecewise constants, with global numbering and boundary constraints.
//!
//! Raw degree-of-freedom numbering:
//!
//! | element      | raw dofs                                  | local order              |
//! |--------------|-------------------------------------------|--------------------------|
//! | `LagrangeP1` | vertex `v`                                | `v0 v1 v2`               |
//! | `LagrangeP2` | vertex `v`, then `n_vertices + e`         | `v0 v1 v2 e0 e1 e2`      |
//! | `Morley`     | vertex `v`, then `n_vertices + e`         | `v0 v1 v2 e0 e1 e2`      |
//! | `CrVector`   | `2 e + c` for component `c`               | `2 i + c`                |
//! | `P0MeanZero` | cell `k`                                  | `k`                      |
//!
//! Morley edge dofs are the mean of the derivative along the global edge
//! normal `n_F`; vertex dofs are point values.

use std::sync::Arc;

use nalgebra::{Matrix6, Vector6};
use thiserror::Error;

use crate::mesh::{Mesh, Point};
use crate::quadrature::EdgeRule;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("boundary condition {bc:?} is not defined for {element:?}")]
    IncompatibleBoundary {
        element: ElementKind,
        bc: BoundaryCondition,
    },
    #[error("degenerate cell {cell}: the local dof matrix is singular")]
    SingularDofMatrix { cell: usize },
    #[error("Lagrange order must be 1 or 2, got {0}")]
    LagrangeOrder(usize),
    #[error("boundary edge {edge} is not axis aligned; normal-component constraint needs n_F = +-e_x or +-e_y")]
    NonAxisAlignedBoundary { edge: usize },
    #[error("expected a {expected} space, got {got:?}")]
    WrongElement {
        expected: &'static str,
        got: ElementKind,
    },
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    LagrangeP1,
    LagrangeP2,
    Morley,
    CrVector,
    P0MeanZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    None,
    /// Morley: zero at boundary vertices.
    Vh,
    /// Morley: zero at boundary vertices and zero mean normal derivative on
    /// boundary edges.
    Vh0,
    /// Vector CR: zero normal component at boundary midpoints.
    CrNormalZero,
    /// Vector CR: both components zero at boundary midpoints.
    CrFullZero,
    /// Lagrange: homogeneous Dirichlet.
    LagrangeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceKind {
    pub element: ElementKind,
    pub bc: BoundaryCondition,
}

impl SpaceKind {
    pub fn new(element: ElementKind, bc: BoundaryCondition) -> Result<Self, SpaceError> {
        use BoundaryCondition as B;
        use ElementKind as E;
        let ok = matches!(
            (element, bc),
            (_, B::None)
                | (E::Morley, B::Vh | B::Vh0)
                | (E::LagrangeP1 | E::LagrangeP2, B::LagrangeZero)
                | (E::CrVector, B::CrNormalZero | B::CrFullZero)
        );
        if ok {
            Ok(Self { element, bc })
        } else {
            Err(SpaceError::IncompatibleBoundary { element, bc })
        }
    }

    pub fn dofs_per_cell(&self) -> usize {
        match self.element {
            ElementKind::LagrangeP1 => 3,
            ElementKind::LagrangeP2 | ElementKind::Morley | ElementKind::CrVector => 6,
            ElementKind::P0MeanZero => 1,
        }
    }
}

/// Global numbering of one discrete space on a mesh.
#[derive(Debug, Clone)]
pub struct DofSpace {
    pub kind: SpaceKind,
    pub mesh: Arc<Mesh>,
    n_raw: usize,
    cell_dofs: Vec<usize>,
    constrained: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
}

impl DofSpace {
    pub fn new(mesh: Arc<Mesh>, kind: SpaceKind) -> Result<Self, SpaceError> {
        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let per = kind.dofs_per_cell();
        let mut cell_dofs = Vec::with_capacity(per * mesh.n_cells());
        for (k, cell) in mesh.cells.iter().enumerate() {
            let edges = mesh.cell_edges[k];
            match kind.element {
                ElementKind::LagrangeP1 => cell_dofs.extend_from_slice(cell),
                ElementKind::LagrangeP2 | ElementKind::Morley => {
                    cell_dofs.extend_from_slice(cell);
                    cell_dofs.extend(edges.iter().map(|&e| nv + e));
                }
                ElementKind::CrVector => {
                    for &e in &edges {
                        cell_dofs.push(2 * e);
                        cell_dofs.push(2 * e + 1);
                    }
                }
                ElementKind::P0MeanZero => cell_dofs.push(k),
            }
        }
        let n_raw = match kind.element {
            ElementKind::LagrangeP1 => nv,
            ElementKind::LagrangeP2 | ElementKind::Morley => nv + ne,
            ElementKind::CrVector => 2 * ne,
            ElementKind::P0MeanZero => mesh.n_cells(),
        };

        let mut constrained = vec![false; n_raw];
        let boundary_vertices = || (0..nv).filter(|&v| mesh.boundary_vertex[v]);
        match (kind.element, kind.bc) {
            (_, BoundaryCondition::None) => {}
            (ElementKind::Morley, BoundaryCondition::Vh) | (ElementKind::LagrangeP1, _) => {
                boundary_vertices().for_each(|v| constrained[v] = true);
            }
            (ElementKind::Morley, BoundaryCondition::Vh0) | (ElementKind::LagrangeP2, _) => {
                boundary_vertices().for_each(|v| constrained[v] = true);
                mesh.boundary_edges()
                    .for_each(|e| constrained[nv + e] = true);
            }
            (ElementKind::CrVector, BoundaryCondition::CrFullZero) => {
                for e in mesh.boundary_edges() {
                    constrained[2 * e] = true;
                    constrained[2 * e + 1] = true;
                }
            }
            (ElementKind::CrVector, BoundaryCondition::CrNormalZero) => {
                for e in mesh.boundary_edges() {
                    let n = mesh.edge_normal[e];
                    if (n[0].abs() - 1.0).abs() < 1e-12 {
                        constrained[2 * e] = true;
                    } else if (n[1].abs() - 1.0).abs() < 1e-12 {
                        constrained[2 * e + 1] = true;
                    } else {
                        return Err(SpaceError::NonAxisAlignedBoundary { edge: e });
                    }
                }
            }
            (element, bc) => return Err(SpaceError::IncompatibleBoundary { element, bc }),
        }

        let mut free_index = vec![None; n_raw];
        let mut free_dofs = Vec::new();
        for (i, &c) in constrained.iter().enumerate() {
            if !c {
                free_index[i] = Some(free_dofs.len());
                free_dofs.push(i);
            }
        }
        Ok(Self {
            kind,
            mesh,
            n_raw,
            cell_dofs,
            constrained,
            free_index,
            free_dofs,
        })
    }

    pub fn morley(mesh: Arc<Mesh>, bc: BoundaryCondition) -> Result<Self, SpaceError> {
        Self::new(mesh, SpaceKind::new(ElementKind::Morley, bc)?)
    }

    /// `W_h`: Lagrange elements of order 1 or 2 with zero boundary values.
    pub fn lagrange(mesh: Arc<Mesh>, order: usize) -> Result<Self, SpaceError> {
        let element = match order {
            1 => ElementKind::LagrangeP1,
            2 => ElementKind::LagrangeP2,
            o => return Err(SpaceError::LagrangeOrder(o)),
        };
        Self::new(
            mesh,
            SpaceKind::new(element, BoundaryCondition::LagrangeZero)?,
        )
    }

    pub fn cr_vector(mesh: Arc<Mesh>, bc: BoundaryCondition) -> Result<Self, SpaceError> {
        Self::new(mesh, SpaceKind::new(ElementKind::CrVector, bc)?)
    }

    pub fn p0(mesh: Arc<Mesh>) -> Result<Self, SpaceError> {
        Self::new(
            mesh,
            SpaceKind::new(ElementKind::P0MeanZero, BoundaryCondition::None)?,
        )
    }

    pub fn element(&self) -> ElementKind {
        self.kind.element
    }

    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn cell_dofs(&self, k: usize) -> &[usize] {
        let per = self.kind.dofs_per_cell();
        &self.cell_dofs[per * k..per * (k + 1)]
    }

    pub fn is_constrained(&self, raw: usize) -> bool {
        self.constrained[raw]
    }

    pub fn constrained_mask(&self) -> &[bool] {
        &self.constrained
    }

    pub fn free_index(&self, raw: usize) -> Option<usize> {
        self.free_index[raw]
    }

    /// Raw index of each free dof, ascending.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Scatter a free-dof vector into raw numbering (constrained dofs zero).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut raw = vec![0.0; self.n_raw];
        for (&r, &v) in self.free_dofs.iter().zip(free) {
            raw[r] = v;
        }
        raw
    }

    pub fn restrict(&self, raw: &[f64]) -> Vec<f64> {
        assert_eq!(raw.len(), self.n_raw);
        self.free_dofs.iter().map(|&r| raw[r]).collect()
    }

    pub fn same_mesh(&self, other: &DofSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Local basis on cell `k`. P0 returns the constant function.
    pub fn local_basis(&self, k: usize) -> Result<CellBasis, SpaceError> {
        match self.kind.element {
            ElementKind::LagrangeP1 => Ok(lagrange_local_basis(&self.mesh, k, 1)?),
            ElementKind::LagrangeP2 => Ok(lagrange_local_basis(&self.mesh, k, 2)?),
            ElementKind::Morley => morley_local_basis(&self.mesh, k),
            ElementKind::CrVector => Ok(cr_vector_local_basis(&self.mesh, k)),
            ElementKind::P0MeanZero => {
                let frame = LocalFrame::of_cell(&self.mesh, k);
                Ok(CellBasis {
                    frame,
                    funcs: vec![Quadratic::constant(1.0)],
                    components: 1,
                })
            }
        }
    }
}

/// Local affine frame `xi = (x - origin) / scale` used to keep the
/// polynomial coefficients well scaled on small cells.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    pub origin: Point,
    pub scale: f64,
}

impl LocalFrame {
    pub fn of_cell(mesh: &Mesh, k: usize) -> Self {
        Self {
            origin: mesh.cell_centroid(k),
            scale: mesh.cell_diameter[k],
        }
    }

    pub fn local(&self, p: Point) -> Point {
        [
            (p[0] - self.origin[0]) / self.scale,
            (p[1] - self.origin[1]) / self.scale,
        ]
    }
}

/// `c0 + c1 xi + c2 eta + c3 xi^2 + c4 xi eta + c5 eta^2` in a local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub c: [f64; 6],
}

impl Quadratic {
    pub fn constant(a: f64) -> Self {
        Self {
            c: [a, 0.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        Self {
            c: [a, b, c, 0.0, 0.0, 0.0],
        }
    }

    /// Product of two linear polynomials.
    pub fn product(l: &Quadratic, m: &Quadratic) -> Self {
        let [a0, a1, a2, ..] = l.c;
        let [b0, b1, b2, ..] = m.c;
        Self {
            c: [
                a0 * b0,
                a0 * b1 + a1 * b0,
                a0 * b2 + a2 * b0,
                a1 * b1,
                a1 * b2 + a2 * b1,
                a2 * b2,
            ],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            c: self.c.map(|x| s * x),
        }
    }

    pub fn add(&self, other: &Quadratic) -> Self {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(other.c) {
            *a += b;
        }
        Self { c }
    }

    fn monomials(xi: Point) -> [f64; 6] {
        let [x, y] = xi;
        [1.0, x, y, x * x, x * y, y * y]
    }

    fn monomial_grads(xi: Point) -> [Point; 6] {
        let [x, y] = xi;
        [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [2.0 * x, 0.0],
            [y, x],
            [0.0, 2.0 * y],
        ]
    }

    pub fn value_local(&self, xi: Point) -> f64 {
        Self::monomials(xi)
            .iter()
            .zip(&self.c)
            .map(|(m, c)| m * c)
            .sum()
    }

    pub fn grad_local(&self, xi: Point) -> Point {
        let [x, y] = xi;
        let c = &self.c;
        [
            c[1] + 2.0 * c[3] * x + c[4] * y,
            c[2] + c[4] * x + 2.0 * c[5] * y,
        ]
    }

    pub fn hessian_local(&self) -> [[f64; 2]; 2] {
        let c = &self.c;
        [[2.0 * c[3], c[4]], [c[4], 2.0 * c[5]]]
    }
}

/// Shape functions of one cell. For vector spaces (`components == 2`),
/// function `j` is scalar function `j / 2` times the unit vector `e_{j % 2}`.
#[derive(Debug, Clone)]
pub struct CellBasis {
    pub frame: LocalFrame,
    pub funcs: Vec<Quadratic>,
    pub components: usize,
}

impl CellBasis {
    pub fn len(&self) -> usize {
        self.funcs.len() * self.components
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    /// Values of the scalar functions at a physical point.
    pub fn values(&self, p: Point) -> Vec<f64> {
        let xi = self.frame.local(p);
        self.funcs.iter().map(|f| f.value_local(xi)).collect()
    }

    /// Physical gradients of the scalar functions.
    pub fn grads(&self, p: Point) -> Vec<Point> {
        let xi = self.frame.local(p);
        let s = self.frame.scale;
        self.funcs
            .iter()
            .map(|f| {
                let g = f.grad_local(xi);
                [g[0] / s, g[1] / s]
            })
            .collect()
    }

    /// Physical Hessians (constant on the cell).
    pub fn hessians(&self) -> Vec<[[f64; 2]; 2]> {
        let s2 = self.frame.scale * self.frame.scale;
        self.funcs
            .iter()
            .map(|f| f.hessian_local().map(|r| r.map(|x| x / s2)))
            .collect()
    }

    /// Values, gradients and Hessians at a set of physical points.
    pub fn tabulate(&self, points: &[Point]) -> LocalBasis {
        LocalBasis {
            values: points.iter().map(|&p| self.values(p)).collect(),
            grads: points.iter().map(|&p| self.grads(p)).collect(),
            hessians: self.hessians(),
        }
    }
}

/// Tabulated scalar shape functions: `values[q][j]`, `grads[q][j]`.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<Point>>,
    pub hessians: Vec<[[f64; 2]; 2]>,
}

/// Barycentric coordinates of cell `k` as linear polynomials in `frame`.
pub fn barycentric_linears(mesh: &Mesh, k: usize, frame: &LocalFrame) -> [Quadratic; 3] {
    let p = mesh.cell_points(k);
    let two_area = 2.0 * mesh.cell_area[k];
    std::array::from_fn(|i| {
        let pj = p[(i + 1) % 3];
        let pk = p[(i + 2) % 3];
        let a = pj[0] * pk[1] - pk[0] * pj[1];
        let b = pj[1] - pk[1];
        let c = pk[0] - pj[0];
        let s = frame.scale;
        let o = frame.origin;
        Quadratic::linear(
            (a + b * o[0] + c * o[1]) / two_area,
            b * s / two_area,
            c * s / two_area,
        )
    })
}

/// Geometric outward normal of local edge `i`, independent of the stored
/// orientation signs.
fn geometric_outward_normal(mesh: &Mesh, k: usize, i: usize) -> Point {
    let p = mesh.cell_points(k);
    let a = p[(i + 1) % 3];
    let b = p[(i + 2) % 3];
    let d = [b[0] - a[0], b[1] - a[1]];
    let len = d[0].hypot(d[1]);
    // Counterclockwise cells: the outward normal is the tangent rotated by -90 degrees.
    [d[1] / len, -d[0] / len]
}

/// Morley shape functions on cell `k`, obtained by inverting the 6x6 matrix
/// of dof functionals applied to the local monomials.
pub fn morley_local_basis(mesh: &Mesh, k: usize) -> Result<CellBasis, SpaceError> {
    let frame = LocalFrame::of_cell(mesh, k);
    let p = mesh.cell_points(k);
    let mut d = Matrix6::<f64>::zeros();
    for i in 0..3 {
        let m = Quadratic::monomials(frame.local(p[i]));
        for (col, v) in m.iter().enumerate() {
            d[(i, col)] = *v;
        }
    }
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        let mid = frame.local([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        let outward = geometric_outward_normal(mesh, k, i);
        let s = mesh.cell_edge_signs[k][i];
        let n = [s * outward[0], s * outward[1]];
        for (col, g) in Quadratic::monomial_grads(mid).iter().enumerate() {
            d[(3 + i, col)] = (n[0] * g[0] + n[1] * g[1]) / frame.scale;
        }
    }
    let inv = d
        .try_inverse()
        .ok_or(SpaceError::SingularDofMatrix { cell: k })?;
    let funcs = (0..6)
        .map(|j| {
            let col: Vector6<f64> = inv.column(j).into();
            Quadratic {
                c: [col[0], col[1], col[2], col[3], col[4], col[5]],
            }
        })
        .collect();
    Ok(CellBasis {
        frame,
        funcs,
        components: 1,
    })
}

/// Nodal Lagrange basis of order 1 or 2 on cell `k`.
pub fn lagrange_local_basis(mesh: &Mesh, k: usize, order: usize) -> Result<CellBasis, SpaceError> {
    let frame = LocalFrame::of_cell(mesh, k);
    let lam = barycentric_linears(mesh, k, &frame);
    let funcs = match order {
        1 => lam.to_vec(),
        2 => {
            let one = Quadratic::constant(1.0);
            let mut f: Vec<Quadratic> = lam
                .iter()
                .map(|l| Quadratic::product(l, &l.scaled(2.0).add(&one.scaled(-1.0))))
                .collect();
            for i in 0..3 {
                f.push(Quadratic::product(&lam[(i + 1) % 3], &lam[(i + 2) % 3]).scaled(4.0));
            }
            f
        }
        o => return Err(SpaceError::LagrangeOrder(o)),
    };
    Ok(CellBasis {
        frame,
        funcs,
        components: 1,
    })
}

/// Crouzeix-Raviart basis: scalar function `i` is `1 - 2 lambda_i`, equal to
/// one at the midpoint of local edge `i` and zero at the other midpoints.
pub fn cr_vector_local_basis(mesh: &Mesh, k: usize) -> CellBasis {
    let frame = LocalFrame::of_cell(mesh, k);
    let lam = barycentric_linears(mesh, k, &frame);
    let one = Quadratic::constant(1.0);
    CellBasis {
        frame,
        funcs: lam.iter().map(|l| one.add(&l.scaled(-2.0))).collect(),
        components: 2,
    }
}

/// Morley interpolant: vertex values and edge means of `grad . n_F`.
pub fn interpolate_morley(
    space: &DofSpace,
    value: impl Fn(Point) -> f64,
    grad: impl Fn(Point) -> Point,
) -> Vec<f64> {
    let mesh = &space.mesh;
    let nv = mesh.n_vertices();
    let rule = EdgeRule::gauss(4);
    let mut raw = vec![0.0; space.n_raw()];
    for (v, &p) in mesh.vertices.iter().enumerate() {
        raw[v] = value(p);
    }
    for (e, ends) in mesh.edges.iter().enumerate() {
        let n = mesh.edge_normal[e];
        let pts = rule.map(mesh.vertices[ends[0]], mesh.vertices[ends[1]]);
        raw[nv + e] = pts
            .iter()
            .zip(&rule.weights)
            .map(|(&p, w)| {
                let g = grad(p);
                w * (g[0] * n[0] + g[1] * n[1])
            })
            .sum();
    }
    raw
}

/// Nodal Lagrange interpolant (vertices, then edge midpoints for P2).
pub fn interpolate_lagrange(space: &DofSpace, value: impl Fn(Point) -> f64) -> Vec<f64> {
    let mesh = &space.mesh;
    let mut raw: Vec<f64> = mesh.vertices.iter().map(|&p| value(p)).collect();
    if space.element() == ElementKind::LagrangeP2 {
        raw.extend((0..mesh.n_edges()).map(|e| value(mesh.edge_midpoint(e))));
    }
    raw
}

/// Crouzeix-Raviart interpolant: edge means of each Cartesian component.
pub fn interpolate_cr(space: &DofSpace, value: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
    let mesh = &space.mesh;
    let rule = EdgeRule::gauss(3);
    let mut raw = vec![0.0; space.n_raw()];
    for (e, ends) in mesh.edges.iter().enumerate() {
        let pts = rule.map(mesh.vertices[ends[0]], mesh.vertices[ends[1]]);
        for (&p, w) in pts.iter().zip(&rule.weights) {
            let v = value(p);
            raw[2 * e] += w * v[0];
            raw[2 * e + 1] += w * v[1];
        }
    }
    raw
}

/// Coefficient vector in raw numbering bound to a space.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub space: Arc<DofSpace>,
    pub coeffs: Vec<f64>,
}

/// Restriction of a field to one cell: scalar coefficients per function.
#[derive(Debug, Clone)]
pub struct CellField {
    pub basis: CellBasis,
    pub coeffs: Vec<f64>,
}

impl CellField {
    pub fn value(&self, p: Point) -> f64 {
        self.basis
            .values(p)
            .iter()
            .zip(&self.coeffs)
            .map(|(v, c)| v * c)
            .sum()
    }

    pub fn grad(&self, p: Point) -> Point {
        self.basis
            .grads(p)
            .iter()
            .zip(&self.coeffs)
            .fold([0.0, 0.0], |acc, (g, c)| {
                [acc[0] + c * g[0], acc[1] + c * g[1]]
            })
    }

    pub fn hessian(&self) -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for (hj, c) in self.basis.hessians().iter().zip(&self.coeffs) {
            for a in 0..2 {
                for b in 0..2 {
                    h[a][b] += c * hj[a][b];
                }
            }
        }
        h
    }

    /// Vector value for two-component spaces.
    pub fn vector_value(&self, p: Point) -> Point {
        let vals = self.basis.values(p);
        let mut out = [0.0; 2];
        for (j, c) in self.coeffs.iter().enumerate() {
            out[j % 2] += c * vals[j / 2];
        }
        out
    }

    /// Jacobian `J[component][direction]` for two-component spaces.
    pub fn vector_grad(&self, p: Point) -> [[f64; 2]; 2] {
        let grads = self.basis.grads(p);
        let mut out = [[0.0; 2]; 2];
        for (j, c) in self.coeffs.iter().enumerate() {
            let g = grads[j / 2];
            out[j % 2][0] += c * g[0];
            out[j % 2][1] += c * g[1];
        }
        out
    }
}

impl DiscreteField {
    pub fn new(space: Arc<DofSpace>, coeffs: Vec<f64>) -> Result<Self, SpaceError> {
        if coeffs.len() != space.n_raw() {
            return Err(SpaceError::LengthMismatch {
                expected: space.n_raw(),
                got: coeffs.len(),
            });
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<DofSpace>) -> Self {
        let n = space.n_raw();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_free(space: Arc<DofSpace>, free: &[f64]) -> Self {
        let coeffs = space.expand(free);
        Self { space, coeffs }
    }

    pub fn on_cell(&self, k: usize) -> Result<CellField, SpaceError> {
        let basis = self.space.local_basis(k)?;
        let coeffs = self
            .space
            .cell_dofs(k)
            .iter()
            .map(|&d| self.coeffs[d])
            .collect();
        Ok(CellField { basis, coeffs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::uniform_unit_square(n).unwrap())
    }

    #[test]
    fn incompatible_boundary_rejected() {
        assert!(SpaceKind::new(ElementKind::LagrangeP1, BoundaryCondition::Vh0).is_err());
        assert!(SpaceKind::new(ElementKind::Morley, BoundaryCondition::CrFullZero).is_err());
        assert!(SpaceKind::new(ElementKind::P0MeanZero, BoundaryCondition::LagrangeZero).is_err());
        assert_eq!(
            DofSpace::lagrange(mesh(1), 3).unwrap_err(),
            SpaceError::LagrangeOrder(3)
        );
    }

    #[test]
    fn free_counts_on_two_by_two_grid() {
        let m = mesh(2);
        let vh0 = DofSpace::morley(m.clone(), BoundaryCondition::Vh0).unwrap();
        assert_eq!(vh0.n_raw(), 25);
        assert_eq!(vh0.n_free(), 9);
        let vh = DofSpace::morley(m.clone(), BoundaryCondition::Vh).unwrap();
        assert_eq!(vh.n_free(), 17);
        let p1 = DofSpace::lagrange(m.clone(), 1).unwrap();
        assert_eq!(p1.n_free(), 1);
        let p2 = DofSpace::lagrange(m.clone(), 2).unwrap();
        assert_eq!(p2.n_free(), 1 + 8);
        let cr0 = DofSpace::cr_vector(m.clone(), BoundaryCondition::CrFullZero).unwrap();
        assert_eq!(cr0.n_free(), 16);
        let crn = DofSpace::cr_vector(m.clone(), BoundaryCondition::CrNormalZero).unwrap();
        assert_eq!(crn.n_free(), 16 + 8);
        assert_eq!(DofSpace::p0(m).unwrap().n_free(), 8);
    }

    #[test]
    fn expand_restrict_inverse() {
        let s = DofSpace::morley(mesh(3), BoundaryCondition::Vh0).unwrap();
        let free: Vec<f64> = (0..s.n_free()).map(|i| i as f64 + 0.5).collect();
        let raw = s.expand(&free);
        assert_eq!(s.restrict(&raw), free);
        for (i, &c) in s.constrained_mask().iter().enumerate() {
            if c {
                assert_eq!(raw[i], 0.0);
                assert!(s.free_index(i).is_none());
            }
        }
    }

    #[test]
    fn morley_constants_reproduce() {
        let m = mesh(3);
        for k in 0..m.n_cells() {
            let b = morley_local_basis(&m, k).unwrap();
            let c = m.cell_centroid(k);
            let vals = b.values(c);
            assert!((vals[0] + vals[1] + vals[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn morley_duality() {
        let m = mesh(4);
        for k in 0..m.n_cells() {
            let b = morley_local_basis(&m, k).unwrap();
            let p = m.cell_points(k);
            for (j, _) in b.funcs.iter().enumerate() {
                for i in 0..3 {
                    let v = b.values(p[i])[j];
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-10);
                }
                for i in 0..3 {
                    let e = m.cell_edges[k][i];
                    let n = m.edge_normal[e];
                    let g = b.grads(m.edge_midpoint(e))[j];
                    let expect = if j == 3 + i { 1.0 } else { 0.0 };
                    assert!((g[0] * n[0] + g[1] * n[1] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn lagrange_p2_nodal_values() {
        let m = mesh(2);
        let b = lagrange_local_basis(&m, 3, 2).unwrap();
        let p = m.cell_points(3);
        for i in 0..3 {
            let a = p[(i + 1) % 3];
            let c = p[(i + 2) % 3];
            let mid = [0.5 * (a[0] + c[0]), 0.5 * (a[1] + c[1])];
            let vals = b.values(mid);
            for v in 0..3 {
                assert!(vals[v].abs() < 1e-13);
            }
            assert!((vals[3 + i] - 1.0).abs() < 1e-13);
        }
        let sum: f64 = b.values([0.3, 0.2]).iter().sum();
        assert!((sum - 1.0).abs() < 1e-13);
    }

    #[test]
    fn cr_basis_values() {
        let m = mesh(2);
        let b = cr_vector_local_basis(&m, 5);
        let p = m.cell_points(5);
        for i in 0..3 {
            let e = m.cell_edges[5][i];
            let vals = b.values(m.edge_midpoint(e));
            for (j, v) in vals.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
            assert!((b.values(p[i])[i] + 1.0).abs() < 1e-13);
        }
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn flipped_sign_changes_basis() {
        let mut m = Mesh::uniform_unit_square(2).unwrap();
        let before = morley_local_basis(&m, 0).unwrap();
        m.debug_flip_edge_sign(0, 1);
        let after = morley_local_basis(&m, 0).unwrap();
        for (a, b) in before.funcs[4].c.iter().zip(after.funcs[4].c) {
            assert!((a + b).abs() < 1e-12);
        }
        assert_ne!(before.funcs[4], after.funcs[4]);
    }
}
