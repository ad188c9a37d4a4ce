//! Experiment configuration, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use mwx_core::analysis::ExactSolution;
use mwx_core::linalg::KrylovOptions;
use mwx_core::methods::{BrinkmanSolver, Method, ProblemSpec, SpdSolver, StageSolvers};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    DirectStrong,
    DirectNitsche,
    DecoupledStrong,
    DecoupledNitsche,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::DirectStrong => Method::DirectStrong,
            MethodName::DirectNitsche => Method::DirectNitsche,
            MethodName::DecoupledStrong => Method::DecoupledStrong,
            MethodName::DecoupledNitsche => Method::DecoupledNitsche,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SpdSolverName {
    AmgCg,
    JacobiCg,
    Dense,
}

impl From<SpdSolverName> for SpdSolver {
    fn from(s: SpdSolverName) -> Self {
        match s {
            SpdSolverName::AmgCg => SpdSolver::AmgCg,
            SpdSolverName::JacobiCg => SpdSolver::JacobiCg,
            SpdSolverName::Dense => SpdSolver::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BrinkmanSolverName {
    Auto,
    GmresBlock,
    Dense,
}

impl From<BrinkmanSolverName> for BrinkmanSolver {
    fn from(s: BrinkmanSolverName) -> Self {
        match s {
            BrinkmanSolverName::Auto => BrinkmanSolver::Auto,
            BrinkmanSolverName::GmresBlock => BrinkmanSolver::GmresBlock,
            BrinkmanSolverName::Dense => BrinkmanSolver::Dense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// 1: smooth solution, 2: boundary layer solution.
    pub example: u8,
    pub method: MethodName,
    pub eps: Vec<f64>,
    /// Mesh levels `k`, with `h = 2^-k` along the axes.
    pub levels: Vec<u32>,
    pub ell: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub poisson_solver: SpdSolverName,
    pub morley_solver: SpdSolverName,
    pub brinkman_solver: BrinkmanSolverName,
    pub tol: f64,
    pub maxit: usize,
    pub restart: usize,
    pub output: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
    /// Append a wall-time column (makes the output run dependent).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            example: 1,
            method: MethodName::DirectStrong,
            eps: vec![1.0],
            levels: (1..=5).collect(),
            ell: 1,
            sigma: 5.0,
            alpha: 2.0,
            poisson_solver: SpdSolverName::AmgCg,
            morley_solver: SpdSolverName::AmgCg,
            brinkman_solver: BrinkmanSolverName::Auto,
            tol: 1e-8,
            maxit: 1000,
            restart: 20,
            output: None,
            plot_data: None,
            timing: false,
        }
    }
}

/// Finest level accepted; `2^-10` already has about four million unknowns.
pub const MAX_LEVEL: u32 = 10;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.example != 1 && self.example != 2 {
            return bad(format!("example must be 1 or 2, got {}", self.example));
        }
        if self.eps.is_empty() {
            return bad("the eps list is empty".into());
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return bad(format!("eps must be positive and finite, got {e}"));
        }
        if self.levels.is_empty() {
            return bad("the level list is empty".into());
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "levels must be strictly ascending, got {:?}",
                self.levels
            ));
        }
        if let Some(k) = self.levels.iter().find(|&&k| k == 0 || k > MAX_LEVEL) {
            return bad(format!("levels must lie in 1..={MAX_LEVEL}, got {k}"));
        }
        if self.ell != 1 && self.ell != 2 {
            return bad(format!("ell must be 1 or 2, got {}", self.ell));
        }
        let nitsche = Method::from(self.method).is_nitsche();
        if nitsche && !(self.sigma >= 1.0) {
            return bad(format!("sigma must be at least 1, got {}", self.sigma));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.maxit == 0 || self.restart == 0 {
            return bad("maxit and restart must be positive".into());
        }
        Ok(())
    }

    pub fn exact(&self, eps: f64) -> ExactSolution {
        match self.example {
            1 => ExactSolution::Example1 { eps },
            _ => ExactSolution::Example2,
        }
    }

    pub fn problem(&self, eps: f64) -> ProblemSpec {
        let ex = self.exact(eps);
        let mut spec = ProblemSpec::new(eps, self.method.into(), Arc::new(move |p| ex.source(p)));
        spec.ell = self.ell;
        spec.sigma = self.sigma;
        spec.alpha = self.alpha;
        spec.solvers = StageSolvers {
            poisson: self.poisson_solver.into(),
            morley: self.morley_solver.into(),
            brinkman: self.brinkman_solver.into(),
        };
        spec.krylov = KrylovOptions {
            tol: self.tol,
            max_iter: self.maxit,
            restart: self.restart,
        };
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_toml() {
        let c = ExperimentConfig::from_toml(
            "example = 2\nmethod = \"direct-nitsche\"\neps = [1e-6]\nlevels = [2, 3]\nell = 2\nbrinkman_solver = \"gmres-block\"\n",
        )
        .unwrap();
        assert_eq!(c.example, 2);
        assert_eq!(c.method, MethodName::DirectNitsche);
        assert_eq!(c.levels, vec![2, 3]);
        assert_eq!(c.brinkman_solver, BrinkmanSolverName::GmresBlock);
        assert_eq!(c.sigma, 5.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentConfig::from_toml("epsilon = [1.0]").is_err());
    }

    #[test]
    fn validation_failures() {
        let check = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{c:?}");
        };
        check(|c| c.eps.clear());
        check(|c| c.eps = vec![0.0]);
        check(|c| c.levels = vec![3, 2]);
        check(|c| c.levels = vec![0]);
        check(|c| c.example = 3);
        check(|c| c.ell = 3);
        check(|c| {
            c.method = MethodName::DirectNitsche;
            c.sigma = 0.5;
        });
        check(|c| c.tol = 0.0);
    }
}
