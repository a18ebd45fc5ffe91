use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockPermutation, BoundaryOperator};
use crate::error::{dim_err, Error, Result};
use crate::image::PatchGeometry;
use crate::sparse::CsrMatrix;

#[derive(Debug)]
struct Operators {
    a: Arc<CsrMatrix>,
    b: Vec<f64>,
    atoms: DMatrix<f64>,
    atoms_t: DMatrix<f64>,
    perm: BlockPermutation,
    boundary: BoundaryOperator,
}

/// The reconstruction problem
///
/// ```text
/// min_alpha  1/(2m) ||A x - b||^2 + mu/q ||alpha||_1 + delta^2 psi(x),
///            x = Pi^T (I kron D) alpha
/// ```
///
/// Operators are shared behind an `Arc`, so re-weighting with
/// [`with_mu`](Self::with_mu) or [`with_delta`](Self::with_delta) is cheap.
#[derive(Debug, Clone)]
pub struct ReconProblem {
    ops: Arc<Operators>,
    mu: f64,
    delta: f64,
}

/// Value of each term of the objective at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `||A x - b||^2 / (2m)`.
    pub data: f64,
    /// `psi(x)`.
    pub psi: f64,
    /// `||alpha||_1`.
    pub l1: f64,
    /// `data + mu/q l1 + delta^2 psi`.
    pub total: f64,
}

fn check_weight(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be finite and nonnegative, got {value}"
        )))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl ReconProblem {
    /// Builds a problem with `mu = delta = 0`.
    pub fn new(
        a: impl Into<Arc<CsrMatrix>>,
        b: Vec<f64>,
        atoms: DMatrix<f64>,
        geometry: PatchGeometry,
    ) -> Result<Self> {
        let a = a.into();
        if a.cols() != geometry.num_pixels() {
            return dim_err(format!(
                "system matrix has {} columns but the image has {} pixels",
                a.cols(),
                geometry.num_pixels()
            ));
        }
        if a.rows() != b.len() {
            return dim_err(format!(
                "system matrix has {} rows but the sinogram has {} entries",
                a.rows(),
                b.len()
            ));
        }
        if atoms.nrows() != geometry.patch_len() {
            return dim_err(format!(
                "dictionary atoms have {} entries, blocks hold {}",
                atoms.nrows(),
                geometry.patch_len()
            ));
        }
        if atoms.ncols() == 0 {
            return dim_err("dictionary has no atoms");
        }
        if b.iter().any(|v| !v.is_finite()) || atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "sinogram and dictionary must be finite".into(),
            ));
        }
        let ops = Operators {
            atoms_t: atoms.transpose(),
            atoms,
            a,
            b,
            perm: BlockPermutation::new(geometry),
            boundary: BoundaryOperator::new(&geometry),
        };
        Ok(Self {
            ops: Arc::new(ops),
            mu: 0.0,
            delta: 0.0,
        })
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Ok(Self {
            ops: Arc::clone(&self.ops),
            mu: check_weight("mu", mu)?,
            delta: self.delta,
        })
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Ok(Self {
            ops: Arc::clone(&self.ops),
            mu: self.mu,
            delta: check_weight("delta", delta)?,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn system_matrix(&self) -> &CsrMatrix {
        &self.ops.a
    }

    pub fn sinogram(&self) -> &[f64] {
        &self.ops.b
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.ops.atoms
    }

    pub fn geometry(&self) -> &PatchGeometry {
        self.ops.perm.geometry()
    }

    pub fn permutation(&self) -> &BlockPermutation {
        &self.ops.perm
    }

    pub fn boundary(&self) -> &BoundaryOperator {
        &self.ops.boundary
    }

    /// Number of measurements `m`.
    pub fn m(&self) -> usize {
        self.ops.b.len()
    }

    /// Number of blocks `q`.
    pub fn q(&self) -> usize {
        self.geometry().num_blocks()
    }

    /// Number of boundary differences `l`.
    pub fn ell(&self) -> usize {
        self.ops.boundary.rows()
    }

    pub fn num_atoms(&self) -> usize {
        self.ops.atoms.ncols()
    }

    /// Length of the stacked coefficient vector, `s q`.
    pub fn num_coeffs(&self) -> usize {
        self.num_atoms() * self.q()
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.num_coeffs() {
            return dim_err(format!(
                "coefficient vector has length {}, expected s*q = {}",
                alpha.len(),
                self.num_coeffs()
            ));
        }
        Ok(())
    }

    /// `x = Pi^T (I kron D) alpha`.
    pub fn synthesize(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let coeffs = DMatrixView::from_slice(alpha, self.num_atoms(), self.q());
        let blocks: DMatrix<f64> = &self.ops.atoms * coeffs;
        self.ops.perm.apply_transpose(blocks.as_slice())
    }

    /// `(I kron D^T) Pi v`.
    pub fn analyze(&self, v: &[f64]) -> Result<Vec<f64>> {
        let permuted = self.ops.perm.apply(v)?;
        let blocks = DMatrixView::from_slice(&permuted, self.ops.atoms.nrows(), self.q());
        let coeffs: DMatrix<f64> = &self.ops.atoms_t * blocks;
        Ok(coeffs.as_slice().to_vec())
    }

    /// `mu_bar = (q/m) ||(I kron D^T) Pi A^T b||_inf`; `alpha = 0` is optimal
    /// for every `mu >= mu_bar` when `delta = 0`.
    pub fn mu_max(&self) -> f64 {
        let atb = self
            .ops
            .a
            .mul_transpose_vec(&self.ops.b)
            .expect("dimensions checked at construction");
        let c = self
            .analyze(&atb)
            .expect("dimensions checked at construction");
        let inf = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        self.q() as f64 / self.m() as f64 * inf
    }

    /// `||A x - b||^2 / (2m)`.
    pub fn data_fidelity(&self, x: &[f64]) -> Result<f64> {
        let ax = self.ops.a.mul_vec(x)?;
        let r: f64 = ax
            .iter()
            .zip(&self.ops.b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        Ok(r / (2.0 * self.m() as f64))
    }

    /// `psi(x)`.
    pub fn psi(&self, x: &[f64]) -> Result<f64> {
        crate::blocks::psi(x, &self.ops.boundary)
    }

    /// Every term of the objective at `alpha`.
    pub fn objective_parts(&self, alpha: &[f64]) -> Result<ObjectiveParts> {
        let x = self.synthesize(alpha)?;
        let data = self.data_fidelity(&x)?;
        let psi = self.psi(&x)?;
        let l1: f64 = alpha.iter().map(|v| v.abs()).sum();
        Ok(ObjectiveParts {
            data,
            psi,
            l1,
            total: data + self.mu / self.q() as f64 * l1 + self.delta * self.delta * psi,
        })
    }

    /// Full objective `F(alpha)`.
    pub fn objective(&self, alpha: &[f64]) -> Result<f64> {
        Ok(self.objective_parts(alpha)?.total)
    }

    /// Smooth part `f(alpha) = data + delta^2 psi`.
    pub fn smooth(&self, alpha: &[f64]) -> Result<f64> {
        let x = self.synthesize(alpha)?;
        let mut f = self.data_fidelity(&x)?;
        if self.delta > 0.0 {
            f += self.delta * self.delta * self.psi(&x)?;
        }
        Ok(f)
    }

    /// `(f(alpha), grad f(alpha))`.
    pub fn smooth_and_gradient(&self, alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = self.synthesize(alpha)?;
        let m = self.m() as f64;
        let mut r = self.ops.a.mul_vec(&x)?;
        for (ri, bi) in r.iter_mut().zip(&self.ops.b) {
            *ri -= bi;
        }
        let mut f = dot(&r, &r) / (2.0 * m);
        let mut back = self.ops.a.mul_transpose_vec(&r)?;
        for v in &mut back {
            *v /= m;
        }
        let ell = self.ell();
        if self.delta > 0.0 && ell > 0 {
            let w = self.delta * self.delta / ell as f64;
            let ltl = self.ops.boundary.normal(&x)?;
            f += 0.5 * w * dot(&x, &ltl);
            for (v, t) in back.iter_mut().zip(&ltl) {
                *v += w * t;
            }
        }
        Ok((f, self.analyze(&back)?))
    }

    /// Hessian of `f` applied to `d`.
    pub fn hessian_apply(&self, d: &[f64]) -> Result<Vec<f64>> {
        let x = self.synthesize(d)?;
        let m = self.m() as f64;
        let ax = self.ops.a.mul_vec(&x)?;
        let mut back = self.ops.a.mul_transpose_vec(&ax)?;
        for v in &mut back {
            *v /= m;
        }
        let ell = self.ell();
        if self.delta > 0.0 && ell > 0 {
            let w = self.delta * self.delta / ell as f64;
            let ltl = self.ops.boundary.normal(&x)?;
            for (v, t) in back.iter_mut().zip(&ltl) {
                *v += w * t;
            }
        }
        self.analyze(&back)
    }

    /// Power-iteration estimate of the largest eigenvalue of the Hessian
    /// of `f`, i.e. the Lipschitz constant of its gradient.
    pub fn lipschitz_estimate(&self, iterations: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v: Vec<f64> = (0..self.num_coeffs())
            .map(|_| rng.random::<f64>() + 0.5)
            .collect();
        let n0 = norm(&v);
        v.iter_mut().for_each(|x| *x /= n0);
        let mut estimate = 0.0;
        for _ in 0..iterations.max(1) {
            let hv = self.hessian_apply(&v)?;
            let nrm = norm(&hv);
            if nrm == 0.0 {
                return Ok(0.0);
            }
            estimate = nrm;
            v = hv.into_iter().map(|x| x / nrm).collect();
        }
        Ok(estimate)
    }
}
