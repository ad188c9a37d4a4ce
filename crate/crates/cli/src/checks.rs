//! Property checks of every module on small meshes, with optional fault
//! injection to make sure the checks can fail.

use std::fmt::Display;
use std::sync::Arc;

use mwx_core::analysis::ExactSolution;
use mwx_core::assembly::{
    assemble_ah, assemble_bh, assemble_ch, assemble_grad_coupling, assemble_h2_penalized_gram,
    assemble_load, assemble_mass, assemble_nitsche_ah,
};
use mwx_core::linalg::{min_eigenvalue, min_generalized_eigenvalue};
use mwx_core::mesh::{Mesh, Point};
use mwx_core::methods::{
    h1_projection, solve, BrinkmanSolver, Method, MethodSolution, ProblemSpec, SpdSolver,
};
use mwx_core::quadrature::{EdgeRule, TriangleRule};
use mwx_core::spaces::{BoundaryCondition, DiscreteField, DofSpace};

/// Mesh resolutions every check runs on.
pub const CHECK_MESHES: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Flip the normal sign of one interior edge in one cell of every mesh.
    pub flip_normal: bool,
    /// Penalty used by the Nitsche coercivity check.
    pub sigma: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            flip_normal: false,
            sigma: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<String, String>;
type CheckFn<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn err(e: impl Display) -> String {
    e.to_string()
}

/// Deterministic pseudo-random numbers in `[-1, 1)`.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }
}

fn build_mesh(n: usize, opts: &CheckOptions) -> Result<Arc<Mesh>, String> {
    let mut mesh = Mesh::uniform_unit_square(n).map_err(err)?;
    if opts.flip_normal {
        let e = mesh
            .interior_edges()
            .next()
            .ok_or("mesh has no interior edge")?;
        let k = mesh.edge_cells[e].0;
        let i = mesh.local_edge(k, e).expect("edge belongs to its cell");
        mesh.debug_flip_edge_sign(k, i);
    }
    Ok(Arc::new(mesh))
}

fn within(name: &str, value: f64, tol: f64) -> Result<(), String> {
    if value <= tol {
        Ok(())
    } else {
        Err(format!("{name}: {value:.3e} exceeds {tol:.3e}"))
    }
}

fn check_quadrature() -> Outcome {
    // int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut worst = 0.0f64;
    for rule in [
        TriangleRule::degree2(),
        TriangleRule::degree4(),
        TriangleRule::degree6(),
    ] {
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let approx: f64 = 0.5
                    * rule
                        .map(&tri)
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum::<f64>();
                worst = worst.max((approx - exact).abs());
            }
        }
    }
    for n in 1..=4 {
        let rule = EdgeRule::gauss(n);
        for d in 0..2 * n as i32 {
            let approx: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(d))
                .sum();
            worst = worst.max((approx - 1.0 / (d + 1) as f64).abs());
        }
    }
    within("quadrature error", worst, 1e-13)?;
    Ok(format!("max error {worst:.1e}"))
}

fn check_mesh(opts: &CheckOptions) -> Outcome {
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let area: f64 = mesh.cell_area.iter().sum();
        worst = worst.max((area - 1.0).abs());
        for e in mesh.interior_edges() {
            let (kp, km) = mesh.edge_cells[e];
            let km = km.expect("interior edge has two cells");
            let nf = mesh.edge_normal[e];
            let dot = |k: usize| {
                let m = mesh.outward_normal(k, mesh.local_edge(k, e).expect("edge of cell"));
                m[0] * nf[0] + m[1] * nf[1]
            };
            let product = dot(kp) * dot(km);
            if (product + 1.0).abs() > 1e-12 {
                return Err(format!(
                    "n={n}: normal orientation product {product} on edge {e}"
                ));
            }
        }
    }
    within("total area defect", worst, 1e-12)?;
    Ok(format!("area defect {worst:.1e}"))
}

fn check_duality(opts: &CheckOptions) -> Outcome {
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let morley = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).map_err(err)?;
        let p1 = DofSpace::lagrange(mesh.clone(), 1).map_err(err)?;
        let p2 = DofSpace::lagrange(mesh.clone(), 2).map_err(err)?;
        let cr = DofSpace::cr_vector(mesh.clone(), BoundaryCondition::None).map_err(err)?;
        for k in 0..mesh.n_cells() {
            let pts = mesh.cell_points(k);
            let mids: Vec<Point> = mesh.cell_edges[k]
                .iter()
                .map(|&e| mesh.edge_midpoint(e))
                .collect();
            let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };

            let b = morley.local_basis(k).map_err(err)?;
            for j in 0..6 {
                for i in 0..3 {
                    worst = worst.max((b.values(pts[i])[j] - delta(i, j)).abs());
                    let nf = mesh.edge_normal[mesh.cell_edges[k][i]];
                    let g = b.grads(mids[i])[j];
                    worst = worst.max((g[0] * nf[0] + g[1] * nf[1] - delta(3 + i, j)).abs());
                }
            }
            let b = p1.local_basis(k).map_err(err)?;
            for (i, p) in pts.iter().enumerate() {
                for (j, v) in b.values(*p).iter().enumerate() {
                    worst = worst.max((v - delta(i, j)).abs());
                }
            }
            let b = p2.local_basis(k).map_err(err)?;
            let nodes: Vec<Point> = pts
                .iter()
                .copied()
                .chain((0..3).map(|i| {
                    let (a, c) = (pts[(i + 1) % 3], pts[(i + 2) % 3]);
                    [0.5 * (a[0] + c[0]), 0.5 * (a[1] + c[1])]
                }))
                .collect();
            for (i, p) in nodes.iter().enumerate() {
                for (j, v) in b.values(*p).iter().enumerate() {
                    worst = worst.max((v - delta(i, j)).abs());
                }
            }
            let b = cr.local_basis(k).map_err(err)?;
            for (i, m) in mids.iter().enumerate() {
                for (j, v) in b.values(*m).iter().enumerate() {
                    worst = worst.max((v - delta(i, j)).abs());
                }
            }
        }
    }
    within("duality defect", worst, 1e-10)?;
    Ok(format!("max defect {worst:.1e}"))
}

fn random_field(space: &Arc<DofSpace>, rng: &mut Lcg) -> DiscreteField {
    DiscreteField::from_free(space.clone(), &rng.vec(space.n_free()))
}

/// Largest `|int_F [grad v] ds|` over interior edges, and over boundary
/// edges (one-sided trace).
fn gradient_jumps(v: &DiscreteField) -> Result<(f64, f64), String> {
    let mesh = &v.space.mesh;
    let rule = EdgeRule::gauss(2);
    let cells = (0..mesh.n_cells())
        .map(|k| v.on_cell(k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let (mut interior, mut boundary) = (0.0f64, 0.0f64);
    for e in 0..mesh.n_edges() {
        let [a, b] = mesh.edges[e].map(|i| mesh.vertices[i]);
        let (kp, km) = mesh.edge_cells[e];
        let mut jump = [0.0; 2];
        for (p, w) in rule.map(a, b).into_iter().zip(&rule.weights) {
            let gp = cells[kp].grad(p);
            let gm = km.map(|k| cells[k].grad(p)).unwrap_or([0.0; 2]);
            jump[0] += w * mesh.edge_length[e] * (gp[0] - gm[0]);
            jump[1] += w * mesh.edge_length[e] * (gp[1] - gm[1]);
        }
        let size = jump[0].hypot(jump[1]);
        if km.is_some() {
            interior = interior.max(size);
        } else {
            boundary = boundary.max(size);
        }
    }
    Ok((interior, boundary))
}

fn check_weak_continuity(opts: &CheckOptions) -> Outcome {
    let mut rng = Lcg(1);
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let vh = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).map_err(err)?);
        let vh0 = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh0).map_err(err)?);
        for _ in 0..3 {
            let (interior, _) = gradient_jumps(&random_field(&vh, &mut rng))?;
            let (i0, b0) = gradient_jumps(&random_field(&vh0, &mut rng))?;
            let m = interior.max(i0).max(b0);
            if m > 1e-10 {
                return Err(format!("n={n}: gradient jump {m:.3e}"));
            }
            worst = worst.max(m);
        }
    }
    Ok(format!("max jump {worst:.1e}"))
}

fn check_curl(opts: &CheckOptions) -> Outcome {
    let mut rng = Lcg(2);
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        for bc in [BoundaryCondition::Vh0, BoundaryCondition::Vh] {
            let space = Arc::new(DofSpace::morley(mesh.clone(), bc).map_err(err)?);
            let v = random_field(&space, &mut rng);
            let cells = (0..mesh.n_cells())
                .map(|k| v.on_cell(k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            let curl = |k: usize, p: Point| {
                let g = cells[k].grad(p);
                [g[1], -g[0]]
            };
            for e in 0..mesh.n_edges() {
                let m = mesh.edge_midpoint(e);
                let (kp, km) = mesh.edge_cells[e];
                let cp = curl(kp, m);
                let defect = match km {
                    Some(km) => {
                        let cm = curl(km, m);
                        (cp[0] - cm[0]).abs().max((cp[1] - cm[1]).abs())
                    }
                    None if bc == BoundaryCondition::Vh0 => cp[0].abs().max(cp[1].abs()),
                    None => {
                        let nf = mesh.edge_normal[e];
                        (cp[0] * nf[0] + cp[1] * nf[1]).abs()
                    }
                };
                if defect > 1e-9 {
                    return Err(format!(
                        "n={n} {bc:?}: curl is not Crouzeix-Raviart at edge {e} ({defect:.3e})"
                    ));
                }
                worst = worst.max(defect);
            }
        }
    }
    Ok(format!("max defect {worst:.1e}"))
}

fn check_forms(opts: &CheckOptions) -> Outcome {
    let mut min_eig = f64::INFINITY;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let space = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh0).map_err(err)?;
        let vh = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).map_err(err)?;
        let cr = DofSpace::cr_vector(mesh.clone(), BoundaryCondition::CrNormalZero).map_err(err)?;
        let a = assemble_ah(&space).map_err(err)?;
        let b = assemble_bh(&space).map_err(err)?;
        let forms = [
            ("a_h", a.matrix.clone()),
            ("b_h", b.matrix.clone()),
            ("mass", assemble_mass(&vh).map_err(err)?.matrix),
            (
                "nitsche",
                assemble_nitsche_ah(&vh, 5.0).map_err(err)?.matrix,
            ),
            ("c_h", assemble_ch(&cr, 5.0).map_err(err)?.matrix),
        ];
        for (name, m) in &forms {
            if !m.is_symmetric(1e-12) {
                return Err(format!(
                    "n={n}: {name} is not symmetric ({:.3e})",
                    m.symmetry_defect()
                ));
            }
        }
        for eps in [1.0, 1e-2, 1e-4, 1e-8] {
            let s = b.add_scaled(&a, eps * eps).map_err(err)?;
            let lam = min_eigenvalue(&s.matrix.to_dense());
            if !(lam > 0.0) {
                return Err(format!(
                    "n={n} eps={eps:.3e}: smallest eigenvalue {lam:.3e}"
                ));
            }
            min_eig = min_eig.min(lam);
        }
    }
    Ok(format!(
        "symmetric; smallest eigenvalue of eps^2 A + B {min_eig:.3e}"
    ))
}

fn check_coercivity(opts: &CheckOptions) -> Outcome {
    if !(opts.sigma > 0.0) {
        return Err(format!("penalty must be positive, got {}", opts.sigma));
    }
    let mut worst = f64::INFINITY;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let space = DofSpace::morley(mesh, BoundaryCondition::Vh).map_err(err)?;
        let a = assemble_nitsche_ah(&space, opts.sigma).map_err(err)?;
        let gram = assemble_h2_penalized_gram(&space).map_err(err)?;
        let lam = min_generalized_eigenvalue(&a.matrix.to_dense(), &gram.matrix.to_dense())
            .map_err(err)?;
        if !(lam > 0.0) {
            return Err(format!(
                "n={n} sigma={}: smallest generalized eigenvalue {lam:.3e}",
                opts.sigma
            ));
        }
        worst = worst.min(lam);
    }
    Ok(format!(
        "sigma={}: smallest generalized eigenvalue {worst:.3e}",
        opts.sigma
    ))
}

fn spec(eps: f64, method: Method, tol: f64) -> ProblemSpec {
    let ex = ExactSolution::Example1 { eps };
    let mut s = ProblemSpec::new(eps, method, Arc::new(move |p| ex.source(p)));
    s.krylov.tol = tol;
    s
}

fn check_projection(opts: &CheckOptions) -> Outcome {
    let mut rng = Lcg(3);
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let s = spec(1e-2, Method::DirectStrong, 1e-13);
        let sol = solve(mesh.clone(), &s).map_err(err)?;
        let wspace = sol.w.space.clone();
        let w = wspace.restrict(&sol.w.coeffs);
        let mspace = DofSpace::morley(mesh, BoundaryCondition::Vh0).map_err(err)?;
        let g = assemble_grad_coupling(&mspace, &wspace).map_err(err)?;
        let f = s.source.clone();
        let load = assemble_load(&wspace, move |p| f(p)).map_err(err)?;
        let gw = g.matrix.matvec(&w);
        for _ in 0..20 {
            let v = rng.vec(mspace.n_free());
            let lhs: f64 = v.iter().zip(&gw).map(|(a, b)| a * b).sum();
            let pv = h1_projection(&wspace, &mspace, &v).map_err(err)?;
            let rhs: f64 = load.iter().zip(&pv).map(|(a, b)| a * b).sum();
            let scale = load.iter().map(|x| x * x).sum::<f64>().sqrt()
                * pv.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = (lhs - rhs).abs() / scale;
            if rel > 1e-9 {
                return Err(format!(
                    "n={n}: (grad w, grad v) and (f, P v) differ by {rel:.3e}"
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("max relative defect {worst:.1e}"))
}

fn decoupled_fields(sol: &MethodSolution) -> Result<(&DiscreteField, &DiscreteField), String> {
    Ok((
        sol.phi
            .as_ref()
            .ok_or("decoupled solution without velocity")?,
        sol.p
            .as_ref()
            .ok_or("decoupled solution without pressure")?,
    ))
}

fn check_brinkman_fields(opts: &CheckOptions) -> Outcome {
    let (mut worst_mean, mut worst_div, mut worst_curl) = (0.0f64, 0.0f64, 0.0f64);
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        for method in [Method::DecoupledStrong, Method::DecoupledNitsche] {
            for eps in [1.0, 1e-3] {
                let sol = solve(mesh.clone(), &spec(eps, method, 1e-12)).map_err(err)?;
                let (phi, p) = decoupled_fields(&sol)?;
                let pmax = p.coeffs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                let mean: f64 = p
                    .coeffs
                    .iter()
                    .zip(&mesh.cell_area)
                    .map(|(a, b)| a * b)
                    .sum();
                worst_mean = worst_mean.max(mean.abs() / pmax);

                let (mut div2, mut phi2, mut curl_defect) = (0.0, 0.0f64, 0.0f64);
                for k in 0..mesh.n_cells() {
                    let c = mesh.cell_centroid(k);
                    let pf = phi.on_cell(k).map_err(err)?;
                    let j = pf.vector_grad(c);
                    div2 += mesh.cell_area[k] * (j[0][0] + j[1][1]).powi(2);
                    let v = pf.vector_value(c);
                    phi2 = phi2.max(v[0].abs()).max(v[1].abs());
                    let g = sol.u.on_cell(k).map_err(err)?.grad(c);
                    curl_defect = curl_defect
                        .max((v[0] - g[1]).abs())
                        .max((v[1] + g[0]).abs());
                }
                let phi_scale = phi2.max(1e-300);
                worst_div = worst_div.max(div2.sqrt() / phi_scale.max(1.0));
                worst_curl = worst_curl.max(curl_defect / phi_scale);
            }
        }
    }
    within("pressure mean", worst_mean, 1e-10)?;
    within("velocity divergence", worst_div, 1e-8)?;
    within("velocity minus curl u", worst_curl, 1e-6)?;
    Ok(format!(
        "mean {worst_mean:.1e}, divergence {worst_div:.1e}, curl defect {worst_curl:.1e}"
    ))
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn check_dense_oracle(opts: &CheckOptions) -> Outcome {
    let mut worst = 0.0f64;
    for n in [2, 4] {
        let mesh = build_mesh(n, opts)?;
        for method in [
            Method::DirectStrong,
            Method::DirectNitsche,
            Method::DecoupledStrong,
            Method::DecoupledNitsche,
        ] {
            for eps in [1.0, 1e-3] {
                let mut s = spec(eps, method, 1e-12);
                s.solvers.brinkman = BrinkmanSolver::GmresBlock;
                let iterative = solve(mesh.clone(), &s).map_err(err)?;
                s.solvers.poisson = SpdSolver::Dense;
                s.solvers.morley = SpdSolver::Dense;
                s.solvers.brinkman = BrinkmanSolver::Dense;
                let dense = solve(mesh.clone(), &s).map_err(err)?;
                let mut d = max_rel_diff(&iterative.u.coeffs, &dense.u.coeffs);
                if let (Some(a), Some(b)) = (&iterative.phi, &dense.phi) {
                    d = d.max(max_rel_diff(&a.coeffs, &b.coeffs));
                }
                if d > 1e-8 {
                    return Err(format!(
                        "n={n} {method:?} eps={eps:.3e}: iterative and dense differ by {d:.3e}"
                    ));
                }
                worst = worst.max(d);
            }
        }
    }
    Ok(format!("max relative difference {worst:.1e}"))
}

fn check_equivalence(opts: &CheckOptions) -> Outcome {
    let mut worst = 0.0f64;
    for n in CHECK_MESHES {
        let mesh = build_mesh(n, opts)?;
        let vh = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).map_err(err)?;
        let b = assemble_bh(&vh).map_err(err)?.matrix;
        for (direct, decoupled, eps_list) in [
            (
                Method::DirectStrong,
                Method::DecoupledStrong,
                [1.0, 1e-2, 1e-4],
            ),
            (
                Method::DirectNitsche,
                Method::DecoupledNitsche,
                [1.0, 1e-2, 1e-6],
            ),
        ] {
            let a = if direct.is_nitsche() {
                assemble_h2_penalized_gram(&vh)
            } else {
                assemble_ah(&vh)
            }
            .map_err(err)?
            .matrix;
            for eps in eps_list {
                let x = solve(mesh.clone(), &spec(eps, direct, 1e-10)).map_err(err)?;
                let y = solve(mesh.clone(), &spec(eps, decoupled, 1e-10)).map_err(err)?;
                let energy = |raw: &[f64]| {
                    let v = vh.restrict(raw);
                    (eps * eps * a.bilinear(&v, &v) + b.bilinear(&v, &v)).sqrt()
                };
                let diff: Vec<f64> =
                    x.u.coeffs
                        .iter()
                        .zip(&y.u.coeffs)
                        .map(|(p, q)| p - q)
                        .collect();
                let rel = energy(&diff) / energy(&x.u.coeffs);
                if !(rel <= 1e-6) {
                    return Err(format!(
                        "n={n} {direct:?} eps={eps:.3e}: relative difference {rel:.3e}"
                    ));
                }
                worst = worst.max(rel);
            }
        }
    }
    Ok(format!("max relative energy difference {worst:.1e}"))
}

/// Run every check; a check that fails reports why.
pub fn run_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    let checks: [(&'static str, CheckFn); 12] = [
        ("quadrature_exactness", Box::new(check_quadrature)),
        ("mesh_orientation", Box::new(|| check_mesh(opts))),
        ("dof_duality", Box::new(|| check_duality(opts))),
        ("weak_continuity", Box::new(|| check_weak_continuity(opts))),
        ("curl_to_cr", Box::new(|| check_curl(opts))),
        ("forms_symmetric_spd", Box::new(|| check_forms(opts))),
        ("nitsche_coercivity", Box::new(|| check_coercivity(opts))),
        ("projection_identity", Box::new(|| check_projection(opts))),
        ("brinkman_fields", Box::new(|| check_brinkman_fields(opts))),
        ("dense_oracle", Box::new(|| check_dense_oracle(opts))),
        ("method_equivalence", Box::new(|| check_equivalence(opts))),
        (
            "flip_sensitivity",
            Box::new(|| check_flip_sensitivity(opts)),
        ),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let outcome = f();
            CheckResult {
                name,
                passed: outcome.is_ok(),
                detail: outcome.unwrap_or_else(|e| e),
            }
        })
        .collect()
}

/// The weak-continuity check must notice a flipped normal on a fresh mesh.
fn check_flip_sensitivity(opts: &CheckOptions) -> Outcome {
    let flipped = CheckOptions {
        flip_normal: true,
        ..*opts
    };
    match check_weak_continuity(&flipped) {
        Err(detail) => Ok(format!("flipped normal detected ({detail})")),
        Ok(_) => Err("weak continuity check accepted a flipped edge normal".into()),
    }
}
