use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mwx_cli::config::{BrinkmanSolverName, ExperimentConfig, MethodName, SpdSolverName};
use mwx_cli::{run_checks, run_convergence, run_solver_bench, sci, CheckOptions, CliError, Table};
use mwx_core::analysis::error_norms;
use mwx_core::mesh::Mesh;
use mwx_core::methods::{monolithic_matrix, solve, Method};
use mwx_core::spaces::{BoundaryCondition, DofSpace};

/// Environment variable capping the number of worker threads.
const THREADS_VAR: &str = "MWX_THREADS";

#[derive(Parser)]
#[command(
    name = "mwx",
    version,
    about = "Morley element experiments for eps^2 Δ²u - Δu = f"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error norms and observed rates over a range of meshes.
    Converge(ExperimentArgs),
    /// Iteration counts of every solver stage.
    Bench(ExperimentArgs),
    /// One solve on one mesh: stage reports and error norms.
    Solve {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Write the Morley system matrix in MatrixMarket format.
        #[arg(long)]
        matrix_out: Option<PathBuf>,
    },
    /// Property checks on small meshes.
    Check {
        /// Flip one edge normal in every mesh (fault injection).
        #[arg(long)]
        flip_normal: bool,
        /// Penalty for the Nitsche coercivity check.
        #[arg(long, default_value_t = 5.0)]
        sigma: f64,
    },
    /// Sizes of the uniform mesh `2^-level` and of the spaces on it.
    MeshInfo {
        #[arg(long, default_value_t = 3)]
        level: u32,
    },
}

#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// TOML file with `key = value` settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<u8>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    /// Comma separated list.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    eps: Option<Vec<f64>>,
    /// Comma separated mesh levels `k`, `h = 2^-k`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    levels: Option<Vec<u32>>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    poisson_solver: Option<SpdSolverName>,
    #[arg(long, value_enum)]
    morley_solver: Option<SpdSolverName>,
    #[arg(long, value_enum)]
    brinkman_solver: Option<BrinkmanSolverName>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    #[arg(long)]
    restart: Option<usize>,
    /// CSV destination; standard output if absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Long-format CSV of every error value, for plotting.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Add a wall-time column.
    #[arg(long)]
    timing: bool,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                })*
            };
        }
        set!(
            example,
            method,
            eps,
            levels,
            ell,
            sigma,
            alpha,
            poisson_solver,
            morley_solver,
            brinkman_solver,
            tol,
            maxit,
            restart
        );
        if self.output.is_some() {
            c.output = self.output.clone();
        }
        if self.plot_data.is_some() {
            c.plot_data = self.plot_data.clone();
        }
        c.timing |= self.timing;
        c.validate()?;
        Ok(c)
    }
}

fn emit(table: &Table, config: &ExperimentConfig) -> Result<(), CliError> {
    match &config.output {
        Some(path) => table.save(path),
        None => table.write_csv(std::io::stdout().lock()),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_VAR} must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn solve_once(config: &ExperimentConfig, matrix_out: Option<&PathBuf>) -> Result<(), CliError> {
    if config.eps.len() != 1 || config.levels.len() != 1 {
        return Err(CliError::Config(
            "solve takes exactly one eps and one level".into(),
        ));
    }
    let (eps, k) = (config.eps[0], config.levels[0]);
    let mesh =
        Arc::new(Mesh::uniform_unit_square(1 << k).map_err(|e| CliError::Config(e.to_string()))?);
    let method = Method::from(config.method);
    if let Some(path) = matrix_out {
        let bc = if method.is_nitsche() {
            BoundaryCondition::Vh
        } else {
            BoundaryCondition::Vh0
        };
        let space =
            DofSpace::morley(mesh.clone(), bc).map_err(|e| CliError::Solver(e.to_string()))?;
        let a = monolithic_matrix(&space, eps, method.is_nitsche().then_some(config.sigma))
            .map_err(|e| CliError::Solver(e.to_string()))?;
        a.write_matrix_market(std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    let sol = solve(mesh, &config.problem(eps)).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut stages = Table::new(&["stage", "solver", "dofs", "iterations", "relative_residual"]);
    for s in &sol.stages {
        stages.rows.push(vec![
            s.stage.to_string(),
            s.solver.to_string(),
            s.n_dofs.to_string(),
            s.report.iterations.to_string(),
            sci(s.report.relative_residual),
        ]);
    }
    let r = error_norms(&config.exact(eps), &sol.u, eps)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let mut errors = Table::new(&["norm", "error"]);
    for (name, v) in [
        ("l2", r.l2),
        ("h1", r.h1),
        ("h2", r.h2),
        ("h2_pen", r.h2_penalized),
        ("energy", r.energy),
        ("energy_pen", r.energy_penalized),
    ] {
        errors.rows.push(vec![name.into(), sci(v)]);
    }
    let mut out = std::io::stdout().lock();
    stages.write_csv(&mut out)?;
    writeln!(out)?;
    errors.write_csv(&mut out)?;
    if let Some(d) = sol.vh0_defect {
        writeln!(out, "\nvh0_defect,{}", sci(d))?;
    }
    Ok(())
}

fn mesh_info(level: u32) -> Result<(), CliError> {
    if level == 0 || level > mwx_cli::config::MAX_LEVEL {
        return Err(CliError::Config(format!(
            "level must lie in 1..={}",
            mwx_cli::config::MAX_LEVEL
        )));
    }
    let mesh = Arc::new(
        Mesh::uniform_unit_square(1 << level).map_err(|e| CliError::Config(e.to_string()))?,
    );
    let space_err = |e: mwx_core::spaces::SpaceError| CliError::Solver(e.to_string());
    let mut t = Table::new(&["quantity", "value"]);
    let mut add = |k: &str, v: String| t.rows.push(vec![k.into(), v]);
    add("vertices", mesh.n_vertices().to_string());
    add("edges", mesh.n_edges().to_string());
    add("boundary_edges", mesh.boundary_edges().count().to_string());
    add("cells", mesh.n_cells().to_string());
    add("h", sci(mesh.h()));
    let morley = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh0).map_err(space_err)?;
    add("morley_dofs", morley.n_raw().to_string());
    add("morley_vh0_free", morley.n_free().to_string());
    let vh = DofSpace::morley(mesh.clone(), BoundaryCondition::Vh).map_err(space_err)?;
    add("morley_vh_free", vh.n_free().to_string());
    let cr = DofSpace::cr_vector(mesh.clone(), BoundaryCondition::CrFullZero).map_err(space_err)?;
    add("brinkman_free", (cr.n_free() + mesh.n_cells()).to_string());
    t.write_csv(std::io::stdout().lock())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Converge(args) => {
            let config = args.resolve()?;
            let run = run_convergence(&config)?;
            emit(&run.table, &config)?;
            if let Some(path) = &config.plot_data {
                run.plot.save(path)?;
            }
            Ok(run.failures == 0)
        }
        Command::Bench(args) => {
            let config = args.resolve()?;
            let (table, failures) = run_solver_bench(&config)?;
            emit(&table, &config)?;
            Ok(failures == 0)
        }
        Command::Solve { args, matrix_out } => {
            let config = args.resolve()?;
            solve_once(&config, matrix_out.as_ref())?;
            Ok(true)
        }
        Command::Check { flip_normal, sigma } => {
            let results = run_checks(&CheckOptions { flip_normal, sigma });
            let mut out = std::io::stdout().lock();
            for r in &results {
                writeln!(
                    out,
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                )?;
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::MeshInfo { level } => {
            mesh_info(level)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mwx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
