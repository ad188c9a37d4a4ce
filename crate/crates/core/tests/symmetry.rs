use std::collections::HashMap;
use std::sync::Arc;

use mwx_core::analysis::ExactSolution;
use mwx_core::mesh::Mesh;
use mwx_core::methods::{solve, Method, ProblemSpec};

/// Raw Morley coefficients of `v(y, x)` expressed on the same mesh.
fn reflect(mesh: &Mesh, raw: &[f64]) -> Vec<f64> {
    let key = |p: [f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let vertex_of: HashMap<_, _> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, &p)| (key(p), i))
        .collect();
    let vmap: Vec<usize> = mesh
        .vertices
        .iter()
        .map(|&p| vertex_of[&key([p[1], p[0]])])
        .collect();
    let edge_of: HashMap<_, _> = mesh
        .edges
        .iter()
        .enumerate()
        .map(|(e, &[a, b])| ((a.min(b), a.max(b)), e))
        .collect();
    let nv = mesh.n_vertices();
    let mut out = vec![0.0; raw.len()];
    for v in 0..nv {
        out[vmap[v]] = raw[v];
    }
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        let (ra, rb) = (vmap[a], vmap[b]);
        let image = edge_of[&(ra.min(rb), ra.max(rb))];
        let n = mesh.edge_normal[e];
        let m = mesh.edge_normal[image];
        let sign = (n[1] * m[0] + n[0] * m[1]).signum();
        out[nv + image] = sign * raw[nv + e];
    }
    out
}

#[test]
fn example_one_solution_is_symmetric() {
    for method in [Method::DirectStrong, Method::DirectNitsche] {
        for n in [4, 8, 16] {
            let mesh = Arc::new(Mesh::uniform_unit_square(n).unwrap());
            let eps = 1e-2;
            let ex = ExactSolution::Example1 { eps };
            let mut spec = ProblemSpec::new(eps, method, Arc::new(move |p| ex.source(p)));
            spec.krylov.tol = 1e-12;
            let u = solve(mesh.clone(), &spec).unwrap().u.coeffs;
            let r = reflect(&mesh, &u);
            let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = u
                .iter()
                .zip(&r)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff <= 1e-8 * scale, "{method:?} n={n}: {diff:e}");
        }
    }
}

#[test]
fn reflection_is_a_nontrivial_involution() {
    let mesh = Mesh::uniform_unit_square(4).unwrap();
    let n = mesh.n_vertices() + mesh.n_edges();
    let v: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
    let r = reflect(&mesh, &v);
    assert_ne!(r, v);
    assert_eq!(reflect(&mesh, &r), v);
}
