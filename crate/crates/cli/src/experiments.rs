//! Convergence studies and solver iteration benchmarks.

use std::sync::Arc;
use std::time::Instant;

use mwx_core::analysis::{error_norms, rate_table, ErrorReport, Rate};
use mwx_core::mesh::Mesh;
use mwx_core::methods::{solve, Method, MethodError, MethodSolution, Stage};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::{sci, CliError, Table};

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub table: Table,
    /// Long format: one row per (eps, level, norm).
    pub plot: Table,
    pub failures: usize,
}

/// Sweep points ordered like the published tables: `eps` descending, then
/// coarse to fine.
fn sweep(config: &ExperimentConfig) -> Vec<(f64, u32)> {
    let mut eps = config.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    eps.iter()
        .flat_map(|&e| config.levels.iter().map(move |&k| (e, k)))
        .collect()
}

fn mesh(k: u32) -> Result<Arc<Mesh>, CliError> {
    Mesh::uniform_unit_square(1 << k)
        .map(Arc::new)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn h_of(k: u32) -> f64 {
    0.5f64.powi(k as i32)
}

struct Point {
    dofs: usize,
    errors: Result<ErrorReport, String>,
    seconds: f64,
}

fn solve_point(config: &ExperimentConfig, eps: f64, k: u32) -> Result<Point, CliError> {
    let mesh = mesh(k)?;
    let dofs = mesh.n_vertices() + mesh.n_edges();
    let spec = config.problem(eps);
    let exact = config.exact(eps);
    let start = Instant::now();
    let errors = match solve(mesh, &spec) {
        Ok(sol) => error_norms(&exact, &sol.u, eps).map_err(|e| e.to_string()),
        Err(MethodError::InvalidSpec(m)) => return Err(CliError::Config(m)),
        Err(e) => Err(e.to_string()),
    };
    Ok(Point {
        dofs,
        errors,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Errors of the configured method against the exact solution, one row per
/// `(eps, h)`, with observed rates between consecutive levels.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceRun, CliError> {
    config.validate()?;
    let nitsche = Method::from(config.method).is_nitsche();
    let points = sweep(config);
    let results: Vec<Point> = points
        .par_iter()
        .map(|&(eps, k)| solve_point(config, eps, k))
        .collect::<Result<_, _>>()?;

    let (h2_name, energy_name) = if nitsche {
        ("h2_pen", "energy_pen")
    } else {
        ("h2", "energy")
    };
    let mut header = vec![
        "eps",
        "level",
        "h",
        "dofs",
        "l2",
        "rate_l2",
        "h1",
        "rate_h1",
        h2_name,
        "rate_h2",
        energy_name,
        "rate_energy",
    ];
    if config.timing {
        header.push("wall_s");
    }
    header.push("status");
    let mut table = Table::new(&header);
    let mut plot = Table::new(&["eps", "level", "h", "norm", "error"]);
    let norm_names = ["l2", "h1", h2_name, energy_name];
    let mut failures = 0;

    for (i, (&(eps, k), point)) in points.iter().zip(&results).enumerate() {
        let values = |r: &ErrorReport| {
            if nitsche {
                [r.l2, r.h1, r.h2_penalized, r.energy_penalized]
            } else {
                [r.l2, r.h1, r.h2, r.energy]
            }
        };
        let mut row = vec![
            sci(eps),
            k.to_string(),
            sci(h_of(k)),
            point.dofs.to_string(),
        ];
        match &point.errors {
            Ok(report) => {
                let cur = values(report);
                let prev = (i > 0 && points[i - 1].0 == eps)
                    .then(|| {
                        results[i - 1]
                            .errors
                            .as_ref()
                            .ok()
                            .map(|r| (points[i - 1].1, values(r)))
                    })
                    .flatten();
                for (j, &e) in cur.iter().enumerate() {
                    let rate = match prev {
                        Some((kp, pv)) => match rate_table(&[pv[j], e])[1] {
                            Rate::Value(r) => Rate::Value(r / (k - kp) as f64),
                            other => other,
                        },
                        None => Rate::Absent,
                    };
                    row.push(sci(e));
                    row.push(rate.to_string());
                    plot.rows.push(vec![
                        sci(eps),
                        k.to_string(),
                        sci(h_of(k)),
                        norm_names[j].to_string(),
                        sci(e),
                    ]);
                }
                if config.timing {
                    row.push(format!("{:.3}", point.seconds));
                }
                row.push("ok".into());
            }
            Err(msg) => {
                failures += 1;
                row.extend(std::iter::repeat_n(String::new(), 8));
                if config.timing {
                    row.push(format!("{:.3}", point.seconds));
                }
                row.push(msg.clone());
            }
        }
        table.rows.push(row);
    }
    Ok(ConvergenceRun {
        table,
        plot,
        failures,
    })
}

fn strong_or_nitsche(method: Method) -> (Method, Method) {
    if method.is_nitsche() {
        (Method::DirectNitsche, Method::DecoupledNitsche)
    } else {
        (Method::DirectStrong, Method::DecoupledStrong)
    }
}

fn failed_stage(e: &MethodError) -> String {
    match e {
        MethodError::Solver { stage, .. } | MethodError::NotConverged { stage, .. } => {
            stage.to_string()
        }
        _ => "-".into(),
    }
}

/// Iteration counts of every solver stage: the Lagrange and monolithic
/// Morley solves of the direct method, then the two Morley solves and the
/// Brinkman solve of the decoupled cascade.
pub fn run_solver_bench(config: &ExperimentConfig) -> Result<(Table, usize), CliError> {
    config.validate()?;
    let (direct, decoupled) = strong_or_nitsche(config.method.into());
    let points = sweep(config);
    let runs: Vec<Vec<(Result<MethodSolution, MethodError>, f64)>> = points
        .par_iter()
        .map(|&(eps, k)| {
            let m = mesh(k)?;
            let mut spec = config.problem(eps);
            [direct, decoupled]
                .into_iter()
                .map(|method| {
                    spec.method = method;
                    let start = Instant::now();
                    match solve(m.clone(), &spec) {
                        Err(MethodError::InvalidSpec(msg)) => Err(CliError::Config(msg)),
                        r => Ok((r, start.elapsed().as_secs_f64())),
                    }
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut header = vec![
        "eps",
        "level",
        "h",
        "stage",
        "dofs",
        "solver",
        "iterations",
        "relative_residual",
        "converged",
    ];
    if config.timing {
        header.push("wall_s");
    }
    header.push("status");
    let mut table = Table::new(&header);
    let mut failures = 0;
    for (&(eps, k), run) in points.iter().zip(&runs) {
        for (i, (result, seconds)) in run.iter().enumerate() {
            let base = vec![sci(eps), k.to_string(), sci(h_of(k))];
            let timing = config.timing.then(|| format!("{seconds:.3}"));
            match result {
                Ok(sol) => {
                    let stages: &[Stage] = if i == 0 {
                        &[Stage::Poisson, Stage::Monolithic]
                    } else {
                        &[Stage::MorleyZ, Stage::Brinkman, Stage::MorleyU]
                    };
                    for &s in stages {
                        let rep = sol.stage(s).expect("every stage of the method reports");
                        let mut row = base.clone();
                        row.extend([
                            s.to_string(),
                            rep.n_dofs.to_string(),
                            rep.solver.to_string(),
                            rep.report.iterations.to_string(),
                            sci(rep.report.relative_residual),
                            rep.report.converged.to_string(),
                        ]);
                        row.extend(timing.clone());
                        row.push("ok".into());
                        table.rows.push(row);
                    }
                }
                Err(e) => {
                    failures += 1;
                    let mut row = base;
                    row.extend([
                        failed_stage(e),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "false".into(),
                    ]);
                    row.extend(timing);
                    row.push(e.to_string());
                    table.rows.push(row);
                }
            }
        }
    }
    Ok((table, failures))
}
