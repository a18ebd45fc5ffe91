use std::collections::BTreeMap;
use std::time::Instant;

use super::art::solve_art;
use super::fista::{solve_l1ball, solve_main, solve_nnls, ReconConfig, ReconOutput, SolverReport};
use super::problem::ReconProblem;
use crate::error::{Error, Result};

/// Parameters a solver may need beyond the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub config: ReconConfig,
    /// l1-ball radius, required by `l1ball`.
    pub gamma: Option<f64>,
    pub art_sweeps: usize,
    pub art_relax: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            config: ReconConfig::default(),
            gamma: None,
            art_sweeps: 20,
            art_relax: 1.0,
        }
    }
}

/// A reconstruction method selectable by name.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn reconstruct(&self, problem: &ReconProblem, settings: &SolverSettings)
        -> Result<ReconOutput>;
}

pub struct MainSolver;
pub struct NnlsSolver;
pub struct L1BallSolver;
pub struct ArtSolver;

impl Reconstructor for MainSolver {
    fn name(&self) -> &'static str {
        "main"
    }

    fn description(&self) -> &'static str {
        "nonnegative l1-penalized fit with boundary penalty"
    }

    fn reconstruct(
        &self,
        problem: &ReconProblem,
        settings: &SolverSettings,
    ) -> Result<ReconOutput> {
        solve_main(problem, &settings.config)
    }
}

impl Reconstructor for NnlsSolver {
    fn name(&self) -> &'static str {
        "nnls"
    }

    fn description(&self) -> &'static str {
        "nonnegative least squares with boundary penalty"
    }

    fn reconstruct(
        &self,
        problem: &ReconProblem,
        settings: &SolverSettings,
    ) -> Result<ReconOutput> {
        solve_nnls(problem, &settings.config)
    }
}

impl Reconstructor for L1BallSolver {
    fn name(&self) -> &'static str {
        "l1ball"
    }

    fn description(&self) -> &'static str {
        "least squares over an l1 ball, no sign constraint"
    }

    fn reconstruct(
        &self,
        problem: &ReconProblem,
        settings: &SolverSettings,
    ) -> Result<ReconOutput> {
        let gamma = settings
            .gamma
            .ok_or_else(|| Error::InvalidParameter("l1ball needs a radius gamma".into()))?;
        solve_l1ball(problem, gamma, &settings.config)
    }
}

impl Reconstructor for ArtSolver {
    fn name(&self) -> &'static str {
        "art"
    }

    fn description(&self) -> &'static str {
        "nonnegative Kaczmarz sweeps, ignores the dictionary"
    }

    fn reconstruct(
        &self,
        problem: &ReconProblem,
        settings: &SolverSettings,
    ) -> Result<ReconOutput> {
        let start = Instant::now();
        let a = problem.system_matrix();
        let x = solve_art(
            a,
            problem.sinogram(),
            &vec![0.0; a.cols()],
            settings.art_sweeps,
            settings.art_relax,
        )?;
        let data = problem.data_fidelity(&x)?;
        let psi = problem.psi(&x)?;
        let delta = problem.delta();
        let geom = problem.geometry();
        let support = x
            .iter()
            .filter(|v| v.abs() > settings.config.support_threshold)
            .count();
        let report = SolverReport {
            solver: "art".into(),
            iterations: settings.art_sweeps,
            objective: data + delta * delta * psi,
            data_fidelity: data,
            psi,
            l1_norm: 0.0,
            l1_weight: 0.0,
            delta,
            support,
            wall_time: start.elapsed(),
            converged: true,
            lipschitz: f64::NAN,
            fixed_point_residual: f64::NAN,
            restarts: 0,
        };
        Ok(ReconOutput {
            alpha: Vec::new(),
            x,
            rows: geom.image_rows(),
            cols: geom.image_cols(),
            report,
        })
    }
}

/// Name-keyed collection of reconstruction methods.
#[derive(Default)]
pub struct SolverRegistry {
    solvers: BTreeMap<&'static str, Box<dyn Reconstructor>>,
}

impl SolverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with `main`, `nnls`, `l1ball` and `art`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(MainSolver));
        reg.register(Box::new(NnlsSolver));
        reg.register(Box::new(L1BallSolver));
        reg.register(Box::new(ArtSolver));
        reg
    }

    /// Adds a solver, replacing any previous one with the same name.
    pub fn register(&mut self, solver: Box<dyn Reconstructor>) {
        self.solvers.insert(solver.name(), solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Reconstructor> {
        self.solvers.get(name).map(|s| s.as_ref()).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown solver '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.solvers.keys().copied().collect()
    }
}
