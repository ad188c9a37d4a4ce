use std::sync::Arc;

use mwx_core::mesh::{Mesh, Point};
use mwx_core::quadrature::EdgeRule;
use mwx_core::spaces::{interpolate_cr, BoundaryCondition, DiscreteField, DofSpace};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_field(space: &Arc<DofSpace>, rng: &mut StdRng) -> DiscreteField {
    let free: Vec<f64> = (0..space.n_free())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DiscreteField::from_free(space.clone(), &free)
}

/// `int_F [grad v] ds` for every edge; boundary edges use the one-sided trace.
fn gradient_jumps(v: &DiscreteField) -> Vec<Point> {
    let mesh = &v.space.mesh;
    let rule = EdgeRule::gauss(2);
    let cells: Vec<_> = (0..mesh.n_cells()).map(|k| v.on_cell(k).unwrap()).collect();
    (0..mesh.n_edges())
        .map(|e| {
            let [a, b] = mesh.edges[e].map(|i| mesh.vertices[i]);
            let len = mesh.edge_length[e];
            let (kp, km) = mesh.edge_cells[e];
            let mut jump = [0.0; 2];
            for (p, w) in rule.map(a, b).into_iter().zip(&rule.weights) {
                let gp = cells[kp].grad(p);
                let gm = km.map(|k| cells[k].grad(p)).unwrap_or([0.0; 2]);
                jump[0] += w * len * (gp[0] - gm[0]);
                jump[1] += w * len * (gp[1] - gm[1]);
            }
            jump
        })
        .collect()
}

#[test]
fn morley_gradients_are_weakly_continuous() {
    let mut rng = StdRng::seed_from_u64(11);
    for n in [2, 4, 8] {
        let mesh = Arc::new(Mesh::uniform_unit_square(n).unwrap());
        let vh = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).unwrap());
        let vh0 = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh0).unwrap());
        for _ in 0..5 {
            let v = random_field(&vh, &mut rng);
            let jumps = gradient_jumps(&v);
            for e in mesh.interior_edges() {
                assert!(
                    jumps[e][0].abs() < 1e-10 && jumps[e][1].abs() < 1e-10,
                    "n={n} e={e} {:?}",
                    jumps[e]
                );
            }
            // The tangential part also vanishes on boundary edges of V_h.
            for e in mesh.boundary_edges() {
                let t = mesh.edge_tangent[e];
                let jt = jumps[e][0] * t[0] + jumps[e][1] * t[1];
                assert!(jt.abs() < 1e-10, "n={n} e={e} {jt}");
            }

            let v0 = random_field(&vh0, &mut rng);
            let jumps = gradient_jumps(&v0);
            for e in 0..mesh.n_edges() {
                assert!(
                    jumps[e][0].abs() < 1e-10 && jumps[e][1].abs() < 1e-10,
                    "n={n} e={e} {:?}",
                    jumps[e]
                );
            }
        }
    }
}

#[test]
fn flipped_edge_sign_breaks_weak_continuity() {
    let mut mesh = Mesh::uniform_unit_square(4).unwrap();
    let e = mesh.interior_edges().next().unwrap();
    let k = mesh.edge_cells[e].0;
    let i = mesh.local_edge(k, e).unwrap();
    mesh.debug_flip_edge_sign(k, i);
    let mesh = Arc::new(mesh);
    let space = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).unwrap());
    let mut raw = vec![0.0; space.n_raw()];
    raw[mesh.n_vertices() + e] = 1.0;
    let v = DiscreteField::new(space, raw).unwrap();
    let j = gradient_jumps(&v)[e];
    assert!(j[0].hypot(j[1]) > 1e-3, "{j:?}");
}

/// Broken curl `(d_y v, -d_x v)` at a point of cell `k`.
fn curl(v: &DiscreteField, k: usize, p: Point) -> Point {
    let g = v.on_cell(k).unwrap().grad(p);
    [g[1], -g[0]]
}

#[test]
fn curl_of_morley_fields_is_crouzeix_raviart() {
    let mut rng = StdRng::seed_from_u64(12);
    for n in [2, 4, 8] {
        let mesh = Arc::new(Mesh::uniform_unit_square(n).unwrap());
        for (bc, cr_bc) in [
            (BoundaryCondition::Vh0, BoundaryCondition::CrFullZero),
            (BoundaryCondition::Vh, BoundaryCondition::CrNormalZero),
        ] {
            let space = Arc::new(DofSpace::morley(mesh.clone(), bc).unwrap());
            let v = random_field(&space, &mut rng);
            for k in 0..mesh.n_cells() {
                let h = v.on_cell(k).unwrap().hessian();
                // div curl v = d_x d_y v - d_y d_x v
                assert!((h[1][0] - h[0][1]).abs() < 1e-9);
            }
            for e in 0..mesh.n_edges() {
                let m = mesh.edge_midpoint(e);
                let (kp, km) = mesh.edge_cells[e];
                let cp = curl(&v, kp, m);
                match km {
                    Some(km) => {
                        let cm = curl(&v, km, m);
                        assert!(
                            (cp[0] - cm[0]).abs() < 1e-9 && (cp[1] - cm[1]).abs() < 1e-9,
                            "n={n} e={e}"
                        );
                    }
                    None => {
                        let nf = mesh.edge_normal[e];
                        assert!((cp[0] * nf[0] + cp[1] * nf[1]).abs() < 1e-9, "n={n} e={e}");
                        if bc == BoundaryCondition::Vh0 {
                            assert!(cp[0].abs() < 1e-9 && cp[1].abs() < 1e-9, "n={n} e={e}");
                        }
                    }
                }
            }

            // The CR interpolant reproduces the curl and respects the CR boundary condition.
            let cr = Arc::new(DofSpace::cr_vector(mesh.clone(), cr_bc).unwrap());
            let mut raw = vec![0.0; cr.n_raw()];
            for e in 0..mesh.n_edges() {
                let c = curl(&v, mesh.edge_cells[e].0, mesh.edge_midpoint(e));
                raw[2 * e] = c[0];
                raw[2 * e + 1] = c[1];
            }
            let constrained_max = (0..cr.n_raw())
                .filter(|&d| cr.is_constrained(d))
                .map(|d| raw[d].abs())
                .fold(0.0, f64::max);
            assert!(constrained_max < 1e-9, "{constrained_max}");
            let phi = DiscreteField::new(cr.clone(), raw).unwrap();
            for k in 0..mesh.n_cells() {
                let c = mesh.cell_centroid(k);
                let a = phi.on_cell(k).unwrap().vector_value(c);
                let b = curl(&v, k, c);
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn lagrange_bases_partition_unity() {
    let mesh = Arc::new(Mesh::uniform_unit_square(4).unwrap());
    for order in [1, 2] {
        let space = DofSpace::lagrange(mesh.clone(), order).unwrap();
        for k in 0..mesh.n_cells() {
            let basis = space.local_basis(k).unwrap();
            let [a, b, c] = mesh.cell_points(k);
            for l in [[0.2, 0.3, 0.5], [0.6, 0.1, 0.3], [1.0 / 3.0; 3]] {
                let p = [
                    l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
                    l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
                ];
                let s: f64 = basis.values(p).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                let g = basis
                    .grads(p)
                    .iter()
                    .fold([0.0; 2], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
                assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
            }
        }
    }
}

#[test]
fn cr_interpolant_of_linear_field_is_exact() {
    let mesh = Arc::new(Mesh::uniform_unit_square(4).unwrap());
    let space = Arc::new(DofSpace::cr_vector(mesh.clone(), BoundaryCondition::None).unwrap());
    let f = |p: Point| [1.0 + 2.0 * p[0] - p[1], 0.5 * p[1] - 3.0 * p[0]];
    let phi = DiscreteField::new(space.clone(), interpolate_cr(&space, f)).unwrap();
    for k in 0..mesh.n_cells() {
        let c = mesh.cell_centroid(k);
        let v = phi.on_cell(k).unwrap().vector_value(c);
        let e = f(c);
        assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12);
    }
}
