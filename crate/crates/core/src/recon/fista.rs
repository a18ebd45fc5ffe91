use std::collections::VecDeque;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::l1ball::project_l1_ball;
use super::problem::{norm, ReconProblem};
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Stopping and step-size settings shared by the gradient solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Coefficients above this count toward the reported support.
    pub support_threshold: f64,
    pub power_iterations: usize,
    /// Objective and iterate changes are measured over this many iterations.
    pub window: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 5000,
            support_threshold: 1e-8,
            power_iterations: 50,
            window: 5,
        }
    }
}

impl ReconConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.window == 0 || !(self.support_threshold >= 0.0) {
            return Err(Error::InvalidParameter(
                "tolerance and window must be positive, support threshold nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solver: String,
    pub iterations: usize,
    pub objective: f64,
    pub data_fidelity: f64,
    pub psi: f64,
    pub l1_norm: f64,
    /// Weight of `||alpha||_1` in the objective (`mu/q`, or 0).
    pub l1_weight: f64,
    pub delta: f64,
    pub support: usize,
    pub wall_time: Duration,
    pub converged: bool,
    pub lipschitz: f64,
    pub fixed_point_residual: f64,
    pub restarts: usize,
}

impl SolverReport {
    /// `data + l1_weight ||alpha||_1 + delta^2 psi`.
    pub fn recombined(&self) -> f64 {
        self.data_fidelity + self.l1_weight * self.l1_norm + self.delta * self.delta * self.psi
    }
}

/// Coefficients, the image they synthesize and the run report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub alpha: Vec<f64>,
    /// Raw image values, column-major. Negative values are kept.
    pub x: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub report: SolverReport,
}

impl ReconOutput {
    /// Image with negative values clamped to zero.
    pub fn display_image(&self) -> GrayImage {
        let data = self.x.iter().map(|v| v.max(0.0)).collect();
        GrayImage::from_column_major(self.rows, self.cols, data)
            .expect("clamped finite values form a valid image")
    }
}

#[derive(Debug, Clone, Copy)]
enum Prox {
    /// `max(0, z - eta w)`.
    NonnegShrink {
        weight: f64,
    },
    L1Ball {
        radius: f64,
    },
}

impl Prox {
    fn apply(self, z: &mut Vec<f64>, eta: f64) -> Result<()> {
        match self {
            Prox::NonnegShrink { weight } => {
                let tau = eta * weight;
                for v in z.iter_mut() {
                    *v = (*v - tau).max(0.0);
                }
            }
            Prox::L1Ball { radius } => *z = project_l1_ball(z, radius)?,
        }
        Ok(())
    }

    fn value(self, alpha: &[f64]) -> f64 {
        match self {
            Prox::NonnegShrink { weight } => weight * alpha.iter().sum::<f64>(),
            Prox::L1Ball { .. } => 0.0,
        }
    }

    fn weight(self) -> f64 {
        match self {
            Prox::NonnegShrink { weight } => weight,
            Prox::L1Ball { .. } => 0.0,
        }
    }
}

fn gradient_step(y: &[f64], grad: &[f64], eta: f64, prox: Prox) -> Result<Vec<f64>> {
    let mut z: Vec<f64> = y.iter().zip(grad).map(|(a, g)| a - eta * g).collect();
    prox.apply(&mut z, eta)?;
    Ok(z)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn diverged(iterations: usize, objective: f64) -> Error {
    Error::Diverged {
        iterations,
        objective,
    }
}

/// Accelerated proximal gradient with function-value restart and
/// backtracking on the quadratic upper bound.
fn accelerated(
    problem: &ReconProblem,
    prox: Prox,
    cfg: &ReconConfig,
    name: &str,
) -> Result<ReconOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let estimate = problem.lipschitz_estimate(cfg.power_iterations)?;
    let mut lip = if estimate > 0.0 { 1.01 * estimate } else { 1.0 };

    let mut x = vec![0.0; problem.num_coeffs()];
    prox.apply(&mut x, 1.0 / lip)?;
    let mut fx_total = problem.smooth(&x)? + prox.value(&x);
    if !fx_total.is_finite() {
        return Err(diverged(0, fx_total));
    }
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut history: VecDeque<(f64, Vec<f64>)> = VecDeque::with_capacity(cfg.window + 1);
    history.push_back((fx_total, x.clone()));
    let mut restarts = 0;
    let mut converged = false;
    let mut fixed_point = f64::NAN;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let (fy, gy) = problem.smooth_and_gradient(&y)?;
        let (z, fz) = loop {
            let z = gradient_step(&y, &gy, 1.0 / lip, prox)?;
            let fz = problem.smooth(&z)?;
            let diff: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bound = fy
                + gy.iter().zip(&diff).map(|(g, d)| g * d).sum::<f64>()
                + 0.5 * lip * diff.iter().map(|d| d * d).sum::<f64>();
            if fz.is_finite() && fz <= bound + 1e-12 * fy.abs().max(1.0) {
                break (z, fz);
            }
            if lip > 1e300 {
                return Err(diverged(iterations, fz));
            }
            lip *= 2.0;
            debug!("{name}: step size halved, L = {lip:e}");
        };
        let fz_total = fz + prox.value(&z);
        if !fz_total.is_finite() {
            return Err(diverged(iterations, fz_total));
        }
        // increases below rounding level are noise, not overshoot
        let slack = 8.0 * f64::EPSILON * fx_total.abs();
        if fz_total > fx_total + slack {
            // momentum overshot; restart from the last accepted iterate
            restarts += 1;
            t = 1.0;
            y.clone_from(&x);
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = z.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            x = z;
            fx_total = fz_total;
            t = t_next;
        }

        history.push_back((fx_total, x.clone()));
        if history.len() > cfg.window + 1 {
            history.pop_front();
        }
        if history.len() == cfg.window + 1 {
            let (f_old, x_old) = &history[0];
            let scale = fx_total.abs().max(f_old.abs()).max(f64::MIN_POSITIVE);
            let obj_change = (f_old - fx_total).abs() / scale;
            let iter_change = distance(&x, x_old) / norm(&x).max(f64::MIN_POSITIVE);
            if obj_change < cfg.tolerance || iter_change < cfg.tolerance {
                let (_, gx) = problem.smooth_and_gradient(&x)?;
                let eta = 1.0 / lip;
                let step = gradient_step(&x, &gx, eta, prox)?;
                fixed_point = distance(&x, &step) / norm(&x).max(1.0);
                if fixed_point < 10.0 * cfg.tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }

    if !converged {
        let (_, gx) = problem.smooth_and_gradient(&x)?;
        let step = gradient_step(&x, &gx, 1.0 / lip, prox)?;
        fixed_point = distance(&x, &step) / norm(&x).max(1.0);
        warn!(
            "{name}: no convergence after {iterations} iterations (fixed-point residual {fixed_point:.3e})"
        );
    }

    let parts = problem.objective_parts(&x)?;
    let weight = prox.weight();
    let delta = problem.delta();
    let support = x.iter().filter(|v| v.abs() > cfg.support_threshold).count();
    let report = SolverReport {
        solver: name.to_string(),
        iterations,
        objective: parts.data + weight * parts.l1 + delta * delta * parts.psi,
        data_fidelity: parts.data,
        psi: parts.psi,
        l1_norm: parts.l1,
        l1_weight: weight,
        delta,
        support,
        wall_time: start.elapsed(),
        converged,
        lipschitz: lip,
        fixed_point_residual: fixed_point,
        restarts,
    };
    let image = problem.synthesize(&x)?;
    let geom = problem.geometry();
    Ok(ReconOutput {
        alpha: x,
        x: image,
        rows: geom.image_rows(),
        cols: geom.image_cols(),
        report,
    })
}

/// Nonnegative sparse reconstruction: minimizes the full objective with
/// `alpha >= 0`.
pub fn solve_main(problem: &ReconProblem, cfg: &ReconConfig) -> Result<ReconOutput> {
    let weight = problem.mu() / problem.q() as f64;
    accelerated(problem, Prox::NonnegShrink { weight }, cfg, "main")
}

/// Nonnegative least squares with the optional boundary penalty (`mu = 0`).
pub fn solve_nnls(problem: &ReconProblem, cfg: &ReconConfig) -> Result<ReconOutput> {
    let mut out = solve_main(&problem.with_mu(0.0)?, cfg)?;
    out.report.solver = "nnls".into();
    Ok(out)
}

/// Least squares over the l1 ball `||alpha||_1 <= gamma`, without a sign
/// constraint. The problem's `mu` is ignored.
pub fn solve_l1ball(problem: &ReconProblem, gamma: f64, cfg: &ReconConfig) -> Result<ReconOutput> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "l1-ball radius must be positive, got {gamma}"
        )));
    }
    accelerated(problem, Prox::L1Ball { radius: gamma }, cfg, "l1ball")
}
