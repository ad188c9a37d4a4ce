//! The four discrete methods: the Morley method with strongly or
//! weakly (Nitsche) imposed `d_n u = 0`, each either solved as one Morley
//! system or decoupled into Poisson-type problems and a Brinkman problem.
//!
//! Both variants start from the Lagrange solve `(grad w, grad chi) = (f, chi)`
//! on `W_h` and use `(grad w, grad_h v)` as right-hand side, which equals
//! `(f, P_h v)` without forming the projection `P_h`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::assembly::{
    assemble_bh, assemble_ch, assemble_curl_coupling, assemble_div_cr_p0, assemble_grad_coupling,
    assemble_load, assemble_mass_cr, assemble_mass_p0, assemble_nitsche_ah, AssemblyError,
};
use crate::linalg::{
    cg, dense_solve, gmres, AmgHierarchy, AmgOptions, BlockFactorization, CsrMatrix,
    JacobiPreconditioner, KrylovOptions, LinalgError, SolveReport,
};
use crate::mesh::{Mesh, Point};
use crate::spaces::{BoundaryCondition, DiscreteField, DofSpace, SpaceError};

pub type Source = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// `d_n u = 0` built into `V_h0`, one Morley system.
    DirectStrong,
    /// Nitsche form on `V_h`, one Morley system.
    DirectNitsche,
    /// Lagrange, Morley, Brinkman, Morley cascade for the strong method.
    DecoupledStrong,
    /// Same cascade for the Nitsche method.
    DecoupledNitsche,
}

impl Method {
    pub fn is_nitsche(self) -> bool {
        matches!(self, Self::DirectNitsche | Self::DecoupledNitsche)
    }

    pub fn is_decoupled(self) -> bool {
        matches!(self, Self::DecoupledStrong | Self::DecoupledNitsche)
    }
}

/// Solver for symmetric positive definite stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpdSolver {
    AmgCg,
    JacobiCg,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BrinkmanSolver {
    /// Block-factorization GMRES for `eps >= 1e-2` or large systems,
    /// dense otherwise.
    Auto,
    GmresBlock,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageSolvers {
    /// Lagrange stage.
    pub poisson: SpdSolver,
    /// Morley stages, including the monolithic system of direct methods.
    pub morley: SpdSolver,
    pub brinkman: BrinkmanSolver,
}

impl Default for StageSolvers {
    fn default() -> Self {
        Self {
            poisson: SpdSolver::AmgCg,
            morley: SpdSolver::AmgCg,
            brinkman: BrinkmanSolver::Auto,
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub eps: f64,
    pub source: Source,
    /// Order of the Lagrange space `W_h`.
    pub ell: usize,
    /// Nitsche penalty.
    pub sigma: f64,
    /// Pressure scaling in the block preconditioner.
    pub alpha: f64,
    pub method: Method,
    pub solvers: StageSolvers,
    pub krylov: KrylovOptions,
    pub amg: AmgOptions,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("eps", &self.eps)
            .field("ell", &self.ell)
            .field("sigma", &self.sigma)
            .field("alpha", &self.alpha)
            .field("method", &self.method)
            .field("solvers", &self.solvers)
            .field("krylov", &self.krylov)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn new(eps: f64, method: Method, source: Source) -> Self {
        Self {
            eps,
            source,
            ell: 1,
            sigma: 5.0,
            alpha: 2.0,
            method,
            solvers: StageSolvers::default(),
            krylov: KrylovOptions::default(),
            amg: AmgOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(MethodError::InvalidSpec(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.ell != 1 && self.ell != 2 {
            return Err(MethodError::InvalidSpec(format!(
                "ell must be 1 or 2, got {}",
                self.ell
            )));
        }
        if self.method.is_nitsche() && !(self.sigma >= 1.0) {
            return Err(MethodError::InvalidSpec(format!(
                "sigma must be at least 1, got {}",
                self.sigma
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(MethodError::InvalidSpec(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Lagrange problem for `w_h`.
    Poisson,
    /// Morley problem for `z_h`.
    MorleyZ,
    /// Brinkman problem for `(phi_h, p_h)`.
    Brinkman,
    /// Morley problem for `u_h`.
    MorleyU,
    /// Monolithic Morley system of the direct methods.
    Monolithic,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Poisson => "poisson",
            Self::MorleyZ => "morley_z",
            Self::Brinkman => "brinkman",
            Self::MorleyU => "morley_u",
            Self::Monolithic => "monolithic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub solver: &'static str,
    pub n_dofs: usize,
    pub report: SolveReport,
}

#[derive(Debug, Error)]
pub enum MethodError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("{stage} stage: {source}")]
    Solver { stage: Stage, source: LinalgError },
    #[error("{stage} stage did not converge: relative residual {:e} after {} iterations", .report.relative_residual, .report.iterations)]
    NotConverged { stage: Stage, report: SolveReport },
    #[error("boundary edge dofs of u_h reach {defect:e}; the solution is not in V_h0")]
    NotInVh0 { defect: f64 },
}

#[derive(Debug, Clone)]
pub struct MethodSolution {
    pub u: DiscreteField,
    pub w: DiscreteField,
    pub z: Option<DiscreteField>,
    pub phi: Option<DiscreteField>,
    pub p: Option<DiscreteField>,
    pub stages: Vec<StageReport>,
    /// Largest boundary edge dof of `u_h` (strong decoupled method only).
    pub vh0_defect: Option<f64>,
}

impl MethodSolution {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

/// Tolerance of the a posteriori `V_h0` membership check.
pub const VH0_TOLERANCE: f64 = 1e-7;

/// Brinkman systems up to this size are solved densely by `Auto` when `eps < 1e-2`.
const AUTO_DENSE_LIMIT: usize = 4000;

pub fn solve(mesh: Arc<Mesh>, spec: &ProblemSpec) -> Result<MethodSolution, MethodError> {
    match spec.method {
        Method::DirectStrong | Method::DirectNitsche => solve_direct(mesh, spec),
        Method::DecoupledStrong | Method::DecoupledNitsche => solve_decoupled(mesh, spec),
    }
}

fn wrap(stage: Stage) -> impl Fn(LinalgError) -> MethodError {
    move |source| MethodError::Solver { stage, source }
}

fn finish(
    stage: Stage,
    solver: &'static str,
    x: Vec<f64>,
    report: SolveReport,
) -> Result<(Vec<f64>, StageReport), MethodError> {
    if !report.converged {
        return Err(MethodError::NotConverged { stage, report });
    }
    let n_dofs = x.len();
    Ok((
        x,
        StageReport {
            stage,
            solver,
            n_dofs,
            report,
        },
    ))
}

fn dense_report(a: &CsrMatrix, x: &[f64], b: &[f64]) -> SolveReport {
    let ax = a.matvec(x);
    let bn = crate::linalg::norm2(b);
    let r: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let rel = if bn > 0.0 { r / bn } else { 0.0 };
    SolveReport {
        iterations: 1,
        relative_residual: rel,
        history: vec![rel],
        converged: true,
    }
}

/// Solve an SPD stage with the requested method.
pub fn solve_spd(
    stage: Stage,
    a: &CsrMatrix,
    b: &[f64],
    solver: SpdSolver,
    krylov: &KrylovOptions,
    amg: &AmgOptions,
    near_nullspace: Option<Vec<f64>>,
) -> Result<(Vec<f64>, StageReport), MethodError> {
    match solver {
        SpdSolver::AmgCg => {
            let opts = AmgOptions {
                near_nullspace,
                ..amg.clone()
            };
            let m = AmgHierarchy::new(a, &opts).map_err(wrap(stage))?;
            let (x, rep) = cg(a, b, &m, krylov).map_err(wrap(stage))?;
            finish(stage, "amg-cg", x, rep)
        }
        SpdSolver::JacobiCg => {
            let m = JacobiPreconditioner::new(a).map_err(wrap(stage))?;
            let (x, rep) = cg(a, b, &m, krylov).map_err(wrap(stage))?;
            finish(stage, "jacobi-cg", x, rep)
        }
        SpdSolver::Dense => {
            let x = dense_solve(&a.to_dense(), b).map_err(wrap(stage))?;
            let rep = dense_report(a, &x, b);
            finish(stage, "dense", x, rep)
        }
    }
}

/// Morley interpolant of the constant one, restricted to the free dofs.
pub fn morley_constant(space: &DofSpace) -> Vec<f64> {
    let nv = space.mesh.n_vertices();
    space
        .free_dofs()
        .iter()
        .map(|&d| if d < nv { 1.0 } else { 0.0 })
        .collect()
}

/// Stage one: `(grad w, grad chi) = (f, chi)` on `W_h`.
fn poisson_stage(
    mesh: &Arc<Mesh>,
    spec: &ProblemSpec,
) -> Result<(Arc<DofSpace>, Vec<f64>, StageReport), MethodError> {
    let wspace = Arc::new(DofSpace::lagrange(mesh.clone(), spec.ell)?);
    let k = assemble_bh(&wspace)?;
    let f = spec.source.clone();
    let load = assemble_load(&wspace, move |p| f(p))?;
    let (w, rep) = solve_spd(
        Stage::Poisson,
        &k.matrix,
        &load,
        spec.solvers.poisson,
        &spec.krylov,
        &spec.amg,
        None,
    )?;
    Ok((wspace, w, rep))
}

/// Monolithic methods: `eps^2 a(u, v) + b(u, v) = (grad w, grad_h v)` with
/// `a = a_h` on `V_h0` or the Nitsche form on `V_h`.
pub fn solve_direct(mesh: Arc<Mesh>, spec: &ProblemSpec) -> Result<MethodSolution, MethodError> {
    spec.validate()?;
    let nitsche = match spec.method {
        Method::DirectStrong => false,
        Method::DirectNitsche => true,
        m => {
            return Err(MethodError::InvalidSpec(format!(
                "solve_direct called with {m:?}"
            )))
        }
    };
    let (wspace, w, wrep) = poisson_stage(&mesh, spec)?;
    let bc = if nitsche {
        BoundaryCondition::Vh
    } else {
        BoundaryCondition::Vh0
    };
    let uspace = Arc::new(DofSpace::morley(mesh.clone(), bc)?);
    let system = monolithic_matrix(&uspace, spec.eps, nitsche.then_some(spec.sigma))?;
    let g = assemble_grad_coupling(&uspace, &wspace)?;
    let rhs = g.matrix.matvec(&w);
    let (u, urep) = solve_spd(
        Stage::Monolithic,
        &system,
        &rhs,
        spec.solvers.morley,
        &spec.krylov,
        &spec.amg,
        Some(morley_constant(&uspace)),
    )?;
    Ok(MethodSolution {
        u: DiscreteField::from_free(uspace, &u),
        w: DiscreteField::from_free(wspace, &w),
        z: None,
        phi: None,
        p: None,
        stages: vec![wrep, urep],
        vh0_defect: None,
    })
}

/// `eps^2 A + B` on a Morley space, with the Nitsche form for `A` when a
/// penalty is given.
pub fn monolithic_matrix(
    space: &DofSpace,
    eps: f64,
    sigma: Option<f64>,
) -> Result<CsrMatrix, MethodError> {
    let a = match sigma {
        Some(s) => assemble_nitsche_ah(space, s)?,
        None => crate::assembly::assemble_ah(space)?,
    };
    let b = assemble_bh(space)?;
    Ok(b.matrix
        .add_scaled(&a.matrix, eps * eps)
        .map_err(AssemblyError::from)?)
}

/// Decoupled methods: Lagrange, Morley, Brinkman, Morley.
pub fn solve_decoupled(mesh: Arc<Mesh>, spec: &ProblemSpec) -> Result<MethodSolution, MethodError> {
    spec.validate()?;
    let nitsche = match spec.method {
        Method::DecoupledStrong => false,
        Method::DecoupledNitsche => true,
        m => {
            return Err(MethodError::InvalidSpec(format!(
                "solve_decoupled called with {m:?}"
            )))
        }
    };
    let (wspace, w, wrep) = poisson_stage(&mesh, spec)?;

    let mspace = Arc::new(DofSpace::morley(mesh.clone(), BoundaryCondition::Vh)?);
    let bm = assemble_bh(&mspace)?;
    let g = assemble_grad_coupling(&mspace, &wspace)?;
    let near = morley_constant(&mspace);
    let (z, zrep) = solve_spd(
        Stage::MorleyZ,
        &bm.matrix,
        &g.matrix.matvec(&w),
        spec.solvers.morley,
        &spec.krylov,
        &spec.amg,
        Some(near.clone()),
    )?;

    let cr_bc = if nitsche {
        BoundaryCondition::CrNormalZero
    } else {
        BoundaryCondition::CrFullZero
    };
    let crspace = Arc::new(DofSpace::cr_vector(mesh.clone(), cr_bc)?);
    let p0 = Arc::new(DofSpace::p0(mesh.clone())?);
    let curl = assemble_curl_coupling(&crspace, &mspace)?;
    let brinkman =
        BrinkmanSystem::assemble(&crspace, &p0, spec.eps, nitsche.then_some(spec.sigma))?;
    let rhs_u = curl.matrix.matvec(&z);
    let (phi, p, brep) = brinkman.solve(&rhs_u, spec)?;

    let (u, urep) = solve_spd(
        Stage::MorleyU,
        &bm.matrix,
        &curl.matrix.matvec_transpose(&phi),
        spec.solvers.morley,
        &spec.krylov,
        &spec.amg,
        Some(near),
    )?;
    let u = DiscreteField::from_free(mspace.clone(), &u);

    let vh0_defect = if nitsche {
        None
    } else {
        let nv = mesh.n_vertices();
        let defect = mesh
            .boundary_edges()
            .map(|e| u.coeffs[nv + e].abs())
            .fold(0.0, f64::max);
        if defect > VH0_TOLERANCE {
            return Err(MethodError::NotInVh0 { defect });
        }
        Some(defect)
    };
    Ok(MethodSolution {
        u,
        w: DiscreteField::from_free(wspace, &w),
        z: Some(DiscreteField::from_free(mspace, &z)),
        phi: Some(DiscreteField::from_free(crspace, &phi)),
        p: Some(DiscreteField::from_free(p0, &p)),
        stages: vec![wrep, zrep, brep, urep],
        vh0_defect,
    })
}

/// Saddle system `[[M + eps^2 K, B^T], [B, 0]]` on CR x P0.
#[derive(Debug, Clone)]
pub struct BrinkmanSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub pressure_mass: CsrMatrix,
    pub eps: f64,
}

impl BrinkmanSystem {
    /// `K` is the broken vector Laplacian, or `c_h` when a penalty is given.
    pub fn assemble(
        cr: &DofSpace,
        p0: &DofSpace,
        eps: f64,
        sigma: Option<f64>,
    ) -> Result<Self, MethodError> {
        let mass = assemble_mass_cr(cr)?;
        let k = match sigma {
            Some(s) => assemble_ch(cr, s)?,
            None => assemble_bh(cr)?,
        };
        let a = mass
            .matrix
            .add_scaled(&k.matrix, eps * eps)
            .map_err(AssemblyError::from)?;
        let b = assemble_div_cr_p0(cr, p0)?.matrix;
        let pressure_mass = assemble_mass_p0(p0)?.matrix;
        Ok(Self {
            a,
            b,
            pressure_mass,
            eps,
        })
    }

    pub fn n_velocity(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> CsrMatrix {
        CsrMatrix::block2x2(
            &self.a,
            Some(&self.b.transpose()),
            Some(&self.b),
            None,
            self.n_pressure(),
        )
        .expect("blocks assembled on matching spaces")
    }

    /// Solve with zero divergence right-hand side; the pressure is returned
    /// with zero weighted mean.
    pub fn solve(
        &self,
        rhs_u: &[f64],
        spec: &ProblemSpec,
    ) -> Result<(Vec<f64>, Vec<f64>, StageReport), MethodError> {
        let n = self.n_velocity() + self.n_pressure();
        let use_dense = match spec.solvers.brinkman {
            BrinkmanSolver::Dense => true,
            BrinkmanSolver::GmresBlock => false,
            BrinkmanSolver::Auto => spec.eps < 1e-2 && n <= AUTO_DENSE_LIMIT,
        };
        let (mut x, solver, report) = if use_dense {
            let x = self.solve_dense(rhs_u)?;
            let mut rhs = rhs_u.to_vec();
            rhs.resize(n, 0.0);
            let rep = dense_report(&self.matrix(), &x, &rhs);
            (x, "dense", rep)
        } else {
            let (x, rep) = self.solve_gmres(rhs_u, spec)?;
            (x, "gmres-abf", rep)
        };
        let mut p = x.split_off(self.n_velocity());
        self.project_pressure(&mut p);
        let (x, stage) = finish(Stage::Brinkman, solver, x, report)?;
        Ok((x, p, StageReport { n_dofs: n, ..stage }))
    }

    pub fn solve_gmres(
        &self,
        rhs_u: &[f64],
        spec: &ProblemSpec,
    ) -> Result<(Vec<f64>, SolveReport), MethodError> {
        let stage = Stage::Brinkman;
        let amg = AmgHierarchy::new(&self.a, &spec.amg).map_err(wrap(stage))?;
        let pre = BlockFactorization::new(amg, &self.b, &self.pressure_mass, self.eps, spec.alpha)
            .map_err(wrap(stage))?;
        let mut rhs = rhs_u.to_vec();
        rhs.resize(self.n_velocity() + self.n_pressure(), 0.0);
        gmres(&self.matrix(), &rhs, &pre, &spec.krylov).map_err(wrap(stage))
    }

    /// Dense solve of the system bordered by the mean-zero constraint on the pressure.
    pub fn solve_dense(&self, rhs_u: &[f64]) -> Result<Vec<f64>, MethodError> {
        let nu = self.n_velocity();
        let np = self.n_pressure();
        let n = nu + np;
        let mut d = DMatrix::<f64>::zeros(n + 1, n + 1);
        for (i, j, v) in self.a.triplets() {
            d[(i, j)] = v;
        }
        for (i, j, v) in self.b.triplets() {
            d[(nu + i, j)] = v;
            d[(j, nu + i)] = v;
        }
        for (k, m) in self.pressure_mass.diagonal().iter().enumerate() {
            d[(n, nu + k)] = *m;
            d[(nu + k, n)] = *m;
        }
        let mut rhs = rhs_u.to_vec();
        rhs.resize(n + 1, 0.0);
        let mut x = dense_solve(&d, &rhs).map_err(wrap(Stage::Brinkman))?;
        x.truncate(n);
        Ok(x)
    }

    fn project_pressure(&self, p: &mut [f64]) {
        let m = self.pressure_mass.diagonal();
        let mean = p.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>() / m.iter().sum::<f64>();
        p.iter_mut().for_each(|v| *v -= mean);
    }
}

/// `H^1` projection onto `W_h` of a Morley field (free coefficients):
/// `(grad P v, grad chi) = (grad_h v, grad chi)`.
pub fn h1_projection(
    wspace: &DofSpace,
    mspace: &DofSpace,
    v: &[f64],
) -> Result<Vec<f64>, MethodError> {
    let k = assemble_bh(wspace)?;
    let g = assemble_grad_coupling(mspace, wspace)?;
    let rhs = g.matrix.matvec_transpose(v);
    let x = dense_solve(&k.matrix.to_dense(), &rhs).map_err(wrap(Stage::Poisson))?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ExactSolution;
    use rand::{Rng, SeedableRng};

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::uniform_unit_square(n).unwrap())
    }

    fn example2(eps: f64, method: Method) -> ProblemSpec {
        let u = ExactSolution::Example2;
        ProblemSpec::new(eps, method, Arc::new(move |p| u.source(p)))
    }

    fn tight(mut spec: ProblemSpec) -> ProblemSpec {
        spec.krylov.tol = 1e-10;
        spec
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        for method in [
            Method::DirectStrong,
            Method::DirectNitsche,
            Method::DecoupledStrong,
            Method::DecoupledNitsche,
        ] {
            let spec = ProblemSpec::new(0.1, method, Arc::new(|_| 0.0));
            let sol = solve(mesh(4), &spec).unwrap();
            assert!(sol.u.coeffs.iter().all(|&c| c == 0.0), "{method:?}");
            for f in [&sol.z, &sol.phi, &sol.p].into_iter().flatten() {
                assert!(f.coeffs.iter().all(|&c| c == 0.0));
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = example2(0.0, Method::DirectStrong);
        assert!(s.validate().is_err());
        s.eps = 1.0;
        s.ell = 3;
        assert!(s.validate().is_err());
        s.ell = 2;
        s.method = Method::DirectNitsche;
        s.sigma = 0.5;
        assert!(s.validate().is_err());
        s.sigma = 5.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn decoupled_matches_direct_on_small_mesh() {
        for (eps, method, direct) in [
            (1.0, Method::DecoupledStrong, Method::DirectStrong),
            (1e-2, Method::DecoupledNitsche, Method::DirectNitsche),
        ] {
            let m = mesh(4);
            let mut a = tight(example2(eps, direct));
            a.solvers.morley = SpdSolver::Dense;
            let mut b = tight(example2(eps, method));
            b.solvers.brinkman = BrinkmanSolver::Dense;
            let ud = solve(m.clone(), &a).unwrap().u;
            let uc = solve(m.clone(), &b).unwrap().u;
            let diff: f64 = ud
                .coeffs
                .iter()
                .zip(&uc.coeffs)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let size = ud.coeffs.iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8 * size, "{method:?}: {diff}");
        }
    }

    #[test]
    fn brinkman_velocity_is_curl_of_u_and_divergence_free() {
        let m = mesh(4);
        let mut spec = tight(example2(1.0, Method::DecoupledStrong));
        spec.solvers.brinkman = BrinkmanSolver::Dense;
        let sol = solve(m.clone(), &spec).unwrap();
        let phi = sol.phi.unwrap();
        let p = sol.p.unwrap();
        let mut div2 = 0.0;
        for k in 0..m.n_cells() {
            let cf = phi.on_cell(k).unwrap();
            let c = m.cell_centroid(k);
            let j = cf.vector_grad(c);
            div2 += m.cell_area[k] * (j[0][0] + j[1][1]).powi(2);
            let g = sol.u.on_cell(k).unwrap().grad(c);
            let v = cf.vector_value(c);
            assert!((v[0] - g[1]).abs() < 1e-9 && (v[1] + g[0]).abs() < 1e-9);
        }
        assert!(div2.sqrt() < 1e-8);
        let mean: f64 = (0..m.n_cells()).map(|k| m.cell_area[k] * p.coeffs[k]).sum();
        assert!(mean.abs() < 1e-10);
        assert!(sol.vh0_defect.unwrap() < VH0_TOLERANCE);
    }

    #[test]
    fn gmres_and_dense_brinkman_agree() {
        let m = mesh(4);
        for (eps, nitsche) in [(1.0, false), (0.1, true)] {
            let cr_bc = if nitsche {
                BoundaryCondition::CrNormalZero
            } else {
                BoundaryCondition::CrFullZero
            };
            let cr = DofSpace::cr_vector(m.clone(), cr_bc).unwrap();
            let p0 = DofSpace::p0(m.clone()).unwrap();
            let sys = BrinkmanSystem::assemble(&cr, &p0, eps, nitsche.then_some(5.0)).unwrap();
            let mut rng = rand::rngs::StdRng::seed_from_u64(9);
            let rhs: Vec<f64> = (0..sys.n_velocity())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let spec = tight(example2(eps, Method::DecoupledStrong));
            let (xg, rep) = sys.solve_gmres(&rhs, &spec).unwrap();
            assert!(rep.converged);
            let xd = sys.solve_dense(&rhs).unwrap();
            let nu = sys.n_velocity();
            for i in 0..nu {
                assert!(
                    (xg[i] - xd[i]).abs() < 1e-8 * xd.iter().map(|v| v.abs()).fold(1.0, f64::max)
                );
            }
        }
    }

    #[test]
    fn projection_identity() {
        let m = mesh(4);
        let spec = tight(example2(1.0, Method::DirectStrong));
        let (wspace, w, _) = poisson_stage(&m, &spec).unwrap();
        let mspace = DofSpace::morley(m.clone(), BoundaryCondition::Vh).unwrap();
        let g = assemble_grad_coupling(&mspace, &wspace).unwrap();
        let f = spec.source.clone();
        let load = assemble_load(&wspace, move |p| f(p)).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let v: Vec<f64> = (0..mspace.n_free())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let lhs = g.matrix.bilinear(&v, &w);
            let pv = h1_projection(&wspace, &mspace, &v).unwrap();
            let rhs: f64 = load.iter().zip(&pv).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn sigma_only_affects_brinkman_and_last_stage() {
        let m = mesh(4);
        let mut a = tight(example2(0.5, Method::DecoupledNitsche));
        a.solvers.brinkman = BrinkmanSolver::Dense;
        let mut b = a.clone();
        b.sigma = 10.0;
        let sa = solve(m.clone(), &a).unwrap();
        let sb = solve(m.clone(), &b).unwrap();
        assert_eq!(sa.w.coeffs, sb.w.coeffs);
        assert_eq!(sa.z.as_ref().unwrap().coeffs, sb.z.as_ref().unwrap().coeffs);
        assert_ne!(sa.u.coeffs, sb.u.coeffs);
    }

    #[test]
    fn direct_strong_error_has_expected_size() {
        let eps = 1.0;
        let exact = ExactSolution::Example1 { eps };
        let spec = ProblemSpec::new(
            eps,
            Method::DirectStrong,
            Arc::new(move |p| exact.source(p)),
        );
        let sol = solve(mesh(16), &spec).unwrap();
        let r = crate::analysis::error_norms(&exact, &sol.u, eps).unwrap();
        // Energy error at h = 1/16 is about 1.9 for eps = 1.
        assert!(r.energy < 4.0 && r.energy > 0.5, "{r:?}");
    }
}
