//! Manufactured solutions, discrete error norms and observed convergence rates.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use crate::mesh::Point;
use crate::quadrature::{EdgeRule, TriangleRule};
use crate::spaces::{DiscreteField, SpaceError};

pub type Hessian = [[f64; 2]; 2];

/// A smooth reference function the discrete solution is compared with.
pub trait ExactField: Sync {
    fn value(&self, p: Point) -> f64;
    fn grad(&self, p: Point) -> Point;
    fn hessian(&self, p: Point) -> Hessian;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    /// `u = sin^2(pi x) sin^2(pi y)` with the source that makes it exact.
    Example1 { eps: f64 },
    /// Reduced solution `u0 = sin(pi x) sin(pi y)` with `f = 2 pi^2 u0`; the
    /// perturbed solution is not known in closed form.
    Example2,
}

/// `s(x) = sin^2(pi x)` and its first four derivatives.
fn s_derivs(x: f64) -> [f64; 5] {
    let s1 = (PI * x).sin();
    let (s2, c2) = (2.0 * PI * x).sin_cos();
    [
        s1 * s1,
        PI * s2,
        2.0 * PI * PI * c2,
        -4.0 * PI.powi(3) * s2,
        -8.0 * PI.powi(4) * c2,
    ]
}

impl ExactSolution {
    pub fn label(&self) -> String {
        match self {
            Self::Example1 { eps } => format!("example1(eps={eps:e})"),
            Self::Example2 => "example2".into(),
        }
    }

    /// Right-hand side `f = eps^2 lap^2 u - lap u` (Example 2: `-lap u0`).
    pub fn source(&self, p: Point) -> f64 {
        match *self {
            Self::Example1 { eps } => {
                let sx = s_derivs(p[0]);
                let sy = s_derivs(p[1]);
                let lap = sx[2] * sy[0] + sx[0] * sy[2];
                let bilap = sx[4] * sy[0] + 2.0 * sx[2] * sy[2] + sx[0] * sy[4];
                eps * eps * bilap - lap
            }
            Self::Example2 => 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin(),
        }
    }

    /// Third derivatives `(u_xxx, u_xxy, u_xyy, u_yyy)`.
    pub fn third(&self, p: Point) -> [f64; 4] {
        match self {
            Self::Example1 { .. } => {
                let sx = s_derivs(p[0]);
                let sy = s_derivs(p[1]);
                [sx[3] * sy[0], sx[2] * sy[1], sx[1] * sy[2], sx[0] * sy[3]]
            }
            Self::Example2 => {
                let (sx, cx) = (PI * p[0]).sin_cos();
                let (sy, cy) = (PI * p[1]).sin_cos();
                let p3 = PI.powi(3);
                [-p3 * cx * sy, -p3 * sx * cy, -p3 * cx * sy, -p3 * sx * cy]
            }
        }
    }
}

impl ExactField for ExactSolution {
    fn value(&self, p: Point) -> f64 {
        match self {
            Self::Example1 { .. } => s_derivs(p[0])[0] * s_derivs(p[1])[0],
            Self::Example2 => (PI * p[0]).sin() * (PI * p[1]).sin(),
        }
    }

    fn grad(&self, p: Point) -> Point {
        match self {
            Self::Example1 { .. } => {
                let sx = s_derivs(p[0]);
                let sy = s_derivs(p[1]);
                [sx[1] * sy[0], sx[0] * sy[1]]
            }
            Self::Example2 => {
                let (sx, cx) = (PI * p[0]).sin_cos();
                let (sy, cy) = (PI * p[1]).sin_cos();
                [PI * cx * sy, PI * sx * cy]
            }
        }
    }

    fn hessian(&self, p: Point) -> Hessian {
        match self {
            Self::Example1 { .. } => {
                let sx = s_derivs(p[0]);
                let sy = s_derivs(p[1]);
                let xy = sx[1] * sy[1];
                [[sx[2] * sy[0], xy], [xy, sx[0] * sy[2]]]
            }
            Self::Example2 => {
                let (sx, cx) = (PI * p[0]).sin_cos();
                let (sy, cy) = (PI * p[1]).sin_cos();
                let p2 = PI * PI;
                let xy = p2 * cx * cy;
                [[-p2 * sx * sy, xy], [xy, -p2 * sx * sy]]
            }
        }
    }
}

/// Errors of a Morley field against an exact function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub l2: f64,
    /// Broken H1 seminorm.
    pub h1: f64,
    /// Broken H2 seminorm.
    pub h2: f64,
    /// `|e|_{2,h}` plus the boundary term `sum_F h_F^{-1} ||d_n e||_F^2`.
    pub h2_penalized: f64,
    /// `sqrt(eps^2 |e|_{2,h}^2 + |e|_{1,h}^2)`.
    pub energy: f64,
    /// Same with the penalized H2 part.
    pub energy_penalized: f64,
}

impl ErrorReport {
    fn from_squares(eps: f64, l2: f64, h1: f64, h2: f64, boundary: f64) -> Self {
        Self {
            l2: l2.sqrt(),
            h1: h1.sqrt(),
            h2: h2.sqrt(),
            h2_penalized: (h2 + boundary).sqrt(),
            energy: (eps * eps * h2 + h1).sqrt(),
            energy_penalized: (eps * eps * (h2 + boundary) + h1).sqrt(),
        }
    }
}

/// Error norms with the default rules: 12-point cells, 4-point Gauss edges.
pub fn error_norms<E: ExactField + ?Sized>(
    exact: &E,
    uh: &DiscreteField,
    eps: f64,
) -> Result<ErrorReport, SpaceError> {
    error_norms_with(
        exact,
        uh,
        eps,
        &TriangleRule::degree6(),
        &EdgeRule::gauss(4),
    )
}

pub fn error_norms_with<E: ExactField + ?Sized>(
    exact: &E,
    uh: &DiscreteField,
    eps: f64,
    cell_rule: &TriangleRule,
    edge_rule: &EdgeRule,
) -> Result<ErrorReport, SpaceError> {
    let mesh = &uh.space.mesh;
    let per_cell: Result<Vec<[f64; 3]>, SpaceError> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|k| {
            let cf = uh.on_cell(k)?;
            let hh = cf.hessian();
            let area = mesh.cell_area[k];
            let mut acc = [0.0; 3];
            for (p, w) in cell_rule
                .map(&mesh.cell_points(k))
                .iter()
                .zip(&cell_rule.weights)
            {
                let e0 = exact.value(*p) - cf.value(*p);
                let g = exact.grad(*p);
                let gh = cf.grad(*p);
                let he = exact.hessian(*p);
                let mut h2 = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        h2 += (he[a][b] - hh[a][b]).powi(2);
                    }
                }
                acc[0] += w * area * e0 * e0;
                acc[1] += w * area * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
                acc[2] += w * area * h2;
            }
            Ok(acc)
        })
        .collect();
    let mut sums = [0.0; 3];
    for c in per_cell? {
        for i in 0..3 {
            sums[i] += c[i];
        }
    }
    let mut boundary = 0.0;
    for e in mesh.boundary_edges() {
        let cf = uh.on_cell(mesh.edge_cells[e].0)?;
        let n = mesh.edge_normal[e];
        let [a, b] = mesh.edges[e];
        // h_F^{-1} cancels the edge length in the quadrature weight.
        for (p, w) in edge_rule
            .map(mesh.vertices[a], mesh.vertices[b])
            .iter()
            .zip(&edge_rule.weights)
        {
            let g = exact.grad(*p);
            let gh = cf.grad(*p);
            let dn = (g[0] - gh[0]) * n[0] + (g[1] - gh[1]) * n[1];
            boundary += w * dn * dn;
        }
    }
    Ok(ErrorReport::from_squares(
        eps, sums[0], sums[1], sums[2], boundary,
    ))
}

/// Observed order between consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// First level: nothing to compare with.
    Absent,
    /// One of the two errors is zero.
    Undefined,
    Value(f64),
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Absent => write!(f, "-"),
            Self::Undefined => write!(f, "exact"),
            Self::Value(v) => write!(f, "{v:.2}"),
        }
    }
}

/// `rate_k = log2(e_{k-1} / e_k)` for errors on meshes with halving `h`.
pub fn rate_table(errors: &[f64]) -> Vec<Rate> {
    let mut out = Vec::with_capacity(errors.len());
    for (k, &e) in errors.iter().enumerate() {
        if k == 0 {
            out.push(Rate::Absent);
        } else if e == 0.0 || errors[k - 1] == 0.0 {
            out.push(Rate::Undefined);
        } else {
            out.push(Rate::Value((errors[k - 1] / e).log2()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::spaces::{interpolate_morley, BoundaryCondition, DofSpace};
    use proptest::prelude::*;
    use std::sync::Arc;

    const STEP: f64 = 1e-4;

    fn fd_grad(f: impl Fn(Point) -> f64, p: Point) -> Point {
        [
            (f([p[0] + STEP, p[1]]) - f([p[0] - STEP, p[1]])) / (2.0 * STEP),
            (f([p[0], p[1] + STEP]) - f([p[0], p[1] - STEP])) / (2.0 * STEP),
        ]
    }

    fn fd_laplacian(f: impl Fn(Point) -> f64, p: Point) -> f64 {
        let c = f(p);
        (f([p[0] + STEP, p[1]])
            + f([p[0] - STEP, p[1]])
            + f([p[0], p[1] + STEP])
            + f([p[0], p[1] - STEP])
            - 4.0 * c)
            / (STEP * STEP)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    proptest! {
        #[test]
        fn example1_derivatives_match_finite_differences(x in 0.05f64..0.95, y in 0.05f64..0.95) {
            let u = ExactSolution::Example1 { eps: 0.3 };
            let p = [x, y];
            let g = fd_grad(|q| u.value(q), p);
            let ga = u.grad(p);
            prop_assert!(close(g[0], ga[0], 1e-6) && close(g[1], ga[1], 1e-6));
            let hx = fd_grad(|q| u.grad(q)[0], p);
            let hy = fd_grad(|q| u.grad(q)[1], p);
            let h = u.hessian(p);
            prop_assert!(close(hx[0], h[0][0], 1e-6) && close(hx[1], h[0][1], 1e-6));
            prop_assert!(close(hy[0], h[1][0], 1e-6) && close(hy[1], h[1][1], 1e-6));
            let t = u.third(p);
            let txx = fd_grad(|q| u.hessian(q)[0][0], p);
            let tyy = fd_grad(|q| u.hessian(q)[1][1], p);
            prop_assert!(close(txx[0], t[0], 1e-6) && close(txx[1], t[1], 1e-6));
            prop_assert!(close(tyy[0], t[2], 1e-6) && close(tyy[1], t[3], 1e-6));
        }

        #[test]
        fn example1_source_matches_nested_differences(x in 0.05f64..0.95, y in 0.05f64..0.95, e in 0.0f64..1.0) {
            let u = ExactSolution::Example1 { eps: e };
            let p = [x, y];
            let lap = |q: Point| { let h = u.hessian(q); h[0][0] + h[1][1] };
            let f_fd = e * e * fd_laplacian(lap, p) - fd_laplacian(|q| u.value(q), p);
            prop_assert!(close(f_fd, u.source(p), 1e-4), "{} vs {}", f_fd, u.source(p));
        }

        #[test]
        fn example2_source_is_minus_laplacian(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let u = ExactSolution::Example2;
            let h = u.hessian([x, y]);
            prop_assert!(close(-(h[0][0] + h[1][1]), u.source([x, y]), 1e-12));
        }
    }

    #[test]
    fn example1_is_symmetric() {
        let u = ExactSolution::Example1 { eps: 1e-2 };
        for (x, y) in [(0.1, 0.7), (0.33, 0.5), (0.9, 0.2)] {
            assert!((u.value([x, y]) - u.value([y, x])).abs() < 1e-15);
            assert!((u.source([x, y]) - u.source([y, x])).abs() < 1e-9);
        }
    }

    struct Quad;

    impl ExactField for Quad {
        fn value(&self, p: Point) -> f64 {
            1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[0] + 3.0 * p[0] * p[1] - p[1] * p[1]
        }
        fn grad(&self, p: Point) -> Point {
            [2.0 + p[0] + 3.0 * p[1], -1.0 + 3.0 * p[0] - 2.0 * p[1]]
        }
        fn hessian(&self, _: Point) -> Hessian {
            [[1.0, 3.0], [3.0, -2.0]]
        }
    }

    #[test]
    fn interpolated_quadratic_has_zero_error() {
        let mesh = Arc::new(Mesh::uniform_unit_square(4).unwrap());
        let s = Arc::new(DofSpace::morley(mesh, BoundaryCondition::None).unwrap());
        let c = interpolate_morley(&s, |p| Quad.value(p), |p| Quad.grad(p));
        let f = DiscreteField::new(s, c).unwrap();
        let r = error_norms(&Quad, &f, 0.5).unwrap();
        for v in [
            r.l2,
            r.h1,
            r.h2,
            r.h2_penalized,
            r.energy,
            r.energy_penalized,
        ] {
            assert!(v < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn norms_recompose() {
        let mesh = Arc::new(Mesh::uniform_unit_square(4).unwrap());
        let s = Arc::new(DofSpace::morley(mesh, BoundaryCondition::Vh0).unwrap());
        let f = DiscreteField::zeros(s);
        let eps = 0.2;
        let u = ExactSolution::Example1 { eps };
        let r = error_norms(&u, &f, eps).unwrap();
        let recomposed = (eps * eps * r.h2 * r.h2 + r.h1 * r.h1).sqrt();
        assert!((recomposed - r.energy).abs() <= 1e-12 * r.energy);
        let recomposed = (eps * eps * r.h2_penalized.powi(2) + r.h1 * r.h1).sqrt();
        assert!((recomposed - r.energy_penalized).abs() <= 1e-12 * r.energy_penalized);
        // |u|_1^2 = 2 (int S'^2)(int S^2) = 2 (pi^2 / 2)(3 / 8) for u = S(x) S(y).
        let exact = (3.0 * PI * PI / 8.0).sqrt();
        assert!((r.h1 - exact).abs() < 1e-4 * exact, "{} vs {exact}", r.h1);
        // Zero normal derivative on the boundary: penalty term vanishes.
        assert!((r.h2_penalized - r.h2).abs() < 1e-12);
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let mesh = Arc::new(Mesh::uniform_unit_square(8).unwrap());
        let s = Arc::new(DofSpace::morley(mesh, BoundaryCondition::Vh0).unwrap());
        let u = ExactSolution::Example2;
        let c = interpolate_morley(&s, |p| u.value(p), |p| u.grad(p));
        let f = DiscreteField::new(s.clone(), c).unwrap();
        let lo = error_norms(&u, &f, 1e-6).unwrap();
        let hi = error_norms_with(
            &u,
            &f,
            1e-6,
            &TriangleRule::conical(14),
            &EdgeRule::gauss(8),
        )
        .unwrap();
        for (a, b) in [
            (lo.l2, hi.l2),
            (lo.h1, hi.h1),
            (lo.h2, hi.h2),
            (lo.h2_penalized, hi.h2_penalized),
        ] {
            assert!((a - b).abs() < 1e-3 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn rates() {
        assert_eq!(
            rate_table(&[4.0, 1.0]),
            vec![Rate::Absent, Rate::Value(2.0)]
        );
        assert_eq!(rate_table(&[3.0, 3.0])[1], Rate::Value(0.0));
        assert_eq!(rate_table(&[1.0, 0.0])[1], Rate::Undefined);
        let r = rate_table(&[9.433e-1, 4.710e-1]);
        assert_eq!(format!("{}", r[1]), "1.00");
        assert_eq!(format!("{}", r[0]), "-");
    }
}
