//! Cone approximation error (MAE) and reconstruction error (RE).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::blocks::BlockPermutation;
use crate::error::{dim_err, Error, Result};
use crate::image::{GrayImage, PatchGeometry};

/// Active-set (Lawson–Hanson) solver for `min 0.5 ||A z - b||^2, z >= 0`
/// working on the normal equations. The Gram matrix is formed once, so many
/// right-hand sides against the same `A` are cheap.
#[derive(Debug, Clone)]
pub struct NnlsSolver {
    gram: DMatrix<f64>,
    a: DMatrix<f64>,
}

/// Solution of one NNLS problem.
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub coeffs: Vec<f64>,
    /// `||A z - b||`.
    pub residual: f64,
    pub iterations: usize,
}

impl NnlsSolver {
    pub fn new(a: &DMatrix<f64>) -> Self {
        Self {
            gram: a.transpose() * a,
            a: a.clone(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<NnlsSolution> {
        if b.len() != self.a.nrows() {
            return dim_err(format!(
                "right-hand side has length {}, expected {}",
                b.len(),
                self.a.nrows()
            ));
        }
        let bv = DVector::from_column_slice(b);
        let atb = self.a.transpose() * &bv;
        let coeffs = lawson_hanson(&self.gram, &atb);
        let residual = (&self.a * DVector::from_column_slice(&coeffs.0) - bv).norm();
        Ok(NnlsSolution {
            coeffs: coeffs.0,
            residual,
            iterations: coeffs.1,
        })
    }
}

/// Solves `gram[P,P] z = rhs[P]` for the passive set `P`.
fn solve_passive(gram: &DMatrix<f64>, rhs: &DVector<f64>, passive: &[usize]) -> Vec<f64> {
    let k = passive.len();
    let sub = DMatrix::from_fn(k, k, |i, j| gram[(passive[i], passive[j])]);
    let sub_rhs = DVector::from_fn(k, |i, _| rhs[passive[i]]);
    if let Some(chol) = sub.clone().cholesky() {
        return chol.solve(&sub_rhs).iter().copied().collect();
    }
    // nearly dependent passive columns; fall back to a least-squares solve
    let svd = sub.svd(true, true);
    svd.solve(&sub_rhs, 1e-13)
        .map(|z| z.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; k])
}

/// Lawson–Hanson on normal equations; returns the solution and the number
/// of outer iterations.
fn lawson_hanson(gram: &DMatrix<f64>, atb: &DVector<f64>) -> (Vec<f64>, usize) {
    let n = gram.nrows();
    let mut x = vec![0.0; n];
    let mut in_passive = vec![false; n];
    let scale = atb.amax().max(gram.amax()).max(1.0);
    let tol = 1e-14 * scale * n as f64;
    let max_outer = 3 * n + 10;
    let mut outer = 0;

    while outer < max_outer {
        outer += 1;
        // dual w = A^T b - A^T A x
        let xv = DVector::from_column_slice(&x);
        let w = atb - gram * &xv;
        let candidate = (0..n)
            .filter(|&j| !in_passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        in_passive[j] = true;

        loop {
            let passive: Vec<usize> = (0..n).filter(|&i| in_passive[i]).collect();
            let z = solve_passive(gram, atb, &passive);
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in passive.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            // step back toward x until the first passive variable hits zero
            let mut step = f64::INFINITY;
            for (&i, &v) in passive.iter().zip(&z) {
                if v <= 0.0 {
                    let denom = x[i] - v;
                    if denom > 0.0 {
                        step = step.min(x[i] / denom);
                    } else {
                        step = 0.0;
                    }
                }
            }
            let step = if step.is_finite() { step } else { 0.0 };
            for (&i, &v) in passive.iter().zip(&z) {
                x[i] += step * (v - x[i]);
                if x[i] <= tol.min(1e-15) || (v <= 0.0 && x[i] <= 1e-14 * scale) {
                    x[i] = 0.0;
                    in_passive[i] = false;
                }
            }
            if !in_passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    (x, outer)
}

/// Nonnegative least squares `min 0.5 ||A z - b||^2, z >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Result<NnlsSolution> {
    NnlsSolver::new(a).solve(b)
}

/// Best conic approximation of one block: coefficients `alpha >= 0`
/// minimizing `||D alpha - x_block||` and the residual norm.
pub fn project_block_to_cone(atoms: &DMatrix<f64>, x_block: &[f64]) -> Result<NnlsSolution> {
    nnls(atoms, x_block)
}

/// Per-block cone residuals `||P_C(x_j) - x_j|| / sqrt(p)` in block order.
pub fn block_approximation_errors(
    atoms: &DMatrix<f64>,
    x_exact: &GrayImage,
    geom: &PatchGeometry,
) -> Result<Vec<f64>> {
    if x_exact.rows() != geom.image_rows() || x_exact.cols() != geom.image_cols() {
        return dim_err(format!(
            "{}x{} image does not match {}x{} geometry",
            x_exact.rows(),
            x_exact.cols(),
            geom.image_rows(),
            geom.image_cols()
        ));
    }
    let p = geom.patch_len();
    if atoms.nrows() != p {
        return dim_err(format!(
            "dictionary has {} rows but blocks hold {p} pixels",
            atoms.nrows()
        ));
    }
    let perm = BlockPermutation::new(*geom);
    let blocks = perm.apply(x_exact.as_slice())?;
    let solver = NnlsSolver::new(atoms);
    let norm = (p as f64).sqrt();
    blocks
        .par_chunks(p)
        .map(|block| solver.solve(block).map(|s| s.residual / norm))
        .collect()
}

/// Mean over blocks of the normalized cone residuals.
pub fn mean_approximation_error(
    atoms: &DMatrix<f64>,
    x_exact: &GrayImage,
    geom: &PatchGeometry,
) -> Result<f64> {
    let errors = block_approximation_errors(atoms, x_exact, geom)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// `||P_C(x) - x|| / ||x||` over the whole image.
pub fn relative_cone_distance(
    atoms: &DMatrix<f64>,
    x_exact: &GrayImage,
    geom: &PatchGeometry,
) -> Result<f64> {
    let p = geom.patch_len() as f64;
    let errors = block_approximation_errors(atoms, x_exact, geom)?;
    let sq: f64 = errors.iter().map(|e| e * e * p).sum();
    let norm = x_exact.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(sq.sqrt() / norm)
}

/// `||x - x_exact|| / ||x_exact||`.
pub fn reconstruction_error(x: &[f64], x_exact: &[f64]) -> Result<f64> {
    if x.len() != x_exact.len() {
        return dim_err(format!(
            "reconstruction has {} values, reference has {}",
            x.len(),
            x_exact.len()
        ));
    }
    let reference = x_exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    if reference == 0.0 {
        return Err(Error::InvalidParameter(
            "reference image is identically zero".into(),
        ));
    }
    let diff = x
        .iter()
        .zip(x_exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / reference)
}

/// Evaluation summary for one reconstruction or dictionary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub re: Option<f64>,
    pub mae: Option<f64>,
    pub block_errors: Vec<f64>,
    pub noise_level: Option<f64>,
    pub geometry: String,
    pub solver: String,
}
