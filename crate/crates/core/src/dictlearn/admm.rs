use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prox::soft_threshold_nonneg;
use crate::dictionary::{ConstraintSet, Dictionary, Provenance};
use crate::error::{Error, Result};
use crate::image::PatchMatrix;

/// Largest useful sparsity weight for data scaled to `[0, 1]`: with
/// `lambda >= p` the zero representation satisfies the KKT conditions for
/// every feasible dictionary.
pub fn lambda_max(patch_len: usize) -> f64 {
    patch_len as f64
}

/// Default penalty as a multiple of the patch length `p`. Much smaller
/// penalties make the non-convex splitting oscillate instead of converging.
pub const DEFAULT_RHO_PER_PIXEL: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub lambda: f64,
    /// ADMM penalty; `None` selects `DEFAULT_RHO_PER_PIXEL * p`.
    pub rho: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub constraint: ConstraintSet,
}

impl LearnConfig {
    /// Penalty actually used for patches of length `patch_len`.
    pub fn effective_rho(&self, patch_len: usize) -> f64 {
        self.rho.unwrap_or(DEFAULT_RHO_PER_PIXEL * patch_len as f64)
    }
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rho: None,
            tolerance: 1e-4,
            max_iterations: 2000,
            seed: 0,
            constraint: ConstraintSet::Ball2,
        }
    }
}

/// Primal, auxiliary and dual iterates.
///
/// Shapes: `d`, `u`, `lambda_dual` are `p x s`; `h`, `v`, `pi_dual` are `s x t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub lambda_dual: DMatrix<f64>,
    pub pi_dual: DMatrix<f64>,
    pub rho: f64,
    pub constraint: ConstraintSet,
    pub iteration: usize,
}

/// Starts from `s` distinct training columns (chosen with a seeded ChaCha8
/// stream) and `V = H = [I 0]`; multipliers start at zero.
pub fn admm_init(y: &PatchMatrix, s: usize, config: &LearnConfig) -> Result<AdmmState> {
    let t = y.count();
    if s == 0 {
        return Err(Error::InvalidParameter(
            "dictionary size must be positive".into(),
        ));
    }
    if s > t {
        return Err(Error::InsufficientData {
            requested: s,
            available: t,
        });
    }
    let p = y.patch_len();
    let rho = config.effective_rho(p);
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "penalty rho must be positive, got {rho}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = index::sample(&mut rng, t, s).into_vec();
    let mut u = DMatrix::zeros(p, s);
    for (j, &col) in picks.iter().enumerate() {
        u.set_column(j, &y.matrix().column(col));
    }
    let mut d = u.clone();
    config.constraint.project(&mut d);
    let v = DMatrix::from_fn(s, t, |i, j| if i == j { 1.0 } else { 0.0 });
    Ok(AdmmState {
        d,
        h: v.clone(),
        u,
        v,
        lambda_dual: DMatrix::zeros(p, s),
        pi_dual: DMatrix::zeros(s, t),
        rho,
        constraint: config.constraint,
        iteration: 0,
    })
}

/// Inverse of a small symmetric positive definite Gram matrix, assembled
/// from its Cholesky factor. The Gram matrices are `s x s` while the
/// right-hand sides have `t >> s` columns, so one matrix product with the
/// inverse is far cheaper than `t` pairs of triangular solves.
fn spd_inverse(g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Factorization("Gram matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

/// `D H` skipping the zero entries of the (sparse, nonnegative) `H`.
fn mul_sparse_right(d: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let p = d.nrows();
    let mut out = DMatrix::zeros(p, h.ncols());
    let ds = d.as_slice();
    for (j, hcol) in h.column_iter().enumerate() {
        let ocol = out.column_mut(j);
        let o = ocol.data.into_slice_mut();
        for (i, &w) in hcol.iter().enumerate() {
            if w != 0.0 {
                for (ov, dv) in o.iter_mut().zip(&ds[i * p..(i + 1) * p]) {
                    *ov += w * dv;
                }
            }
        }
    }
    out
}

/// `M H^T` skipping the zero entries of `H`.
fn mul_sparse_transpose(m: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    let mut out = DMatrix::zeros(p, h.nrows());
    let ms = m.as_slice();
    let os = out.as_mut_slice();
    for (j, hcol) in h.column_iter().enumerate() {
        let mcol = &ms[j * p..(j + 1) * p];
        for (i, &w) in hcol.iter().enumerate() {
            if w != 0.0 {
                for (ov, mv) in os[i * p..(i + 1) * p].iter_mut().zip(mcol) {
                    *ov += w * mv;
                }
            }
        }
    }
    out
}

fn regularized_gram(g: DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut g = g;
    for i in 0..g.nrows() {
        g[(i, i)] += rho;
    }
    g
}

impl AdmmState {
    /// `D <- P(U - Lambda / rho)`.
    pub fn update_d(&mut self) {
        let mut d = &self.u - &self.lambda_dual / self.rho;
        self.constraint.project(&mut d);
        self.d = d;
    }

    /// `V <- (U^T U + rho I)^-1 (U^T Y + Pi + rho H)`.
    pub fn update_v(&mut self, y: &DMatrix<f64>) -> Result<()> {
        let ut = self.u.transpose();
        let inv = spd_inverse(regularized_gram(&ut * &self.u, self.rho))?;
        let rhs = &ut * y + &self.pi_dual + &self.h * self.rho;
        self.v = inv * rhs;
        Ok(())
    }

    /// `H <- max(0, V - Pi / rho - lambda / rho)`.
    pub fn update_h(&mut self, lambda: f64) {
        let shifted = &self.v - &self.pi_dual / self.rho;
        self.h = soft_threshold_nonneg(&shifted, lambda / self.rho);
    }

    /// `U <- (Y V^T + Lambda + rho D)(V V^T + rho I)^-1`.
    pub fn update_u(&mut self, y: &DMatrix<f64>) -> Result<()> {
        let vt = self.v.transpose();
        let inv = spd_inverse(regularized_gram(&self.v * &vt, self.rho))?;
        let rhs = y * &vt + &self.lambda_dual + &self.d * self.rho;
        self.u = rhs * inv;
        Ok(())
    }

    /// Dual ascent on both multipliers.
    pub fn update_duals(&mut self) {
        self.lambda_dual += (&self.d - &self.u) * self.rho;
        self.pi_dual += (&self.h - &self.v) * self.rho;
    }
}

/// One ADMM sweep: `D`, `V`, `H`, `U`, then the multipliers.
pub fn admm_step(state: &mut AdmmState, y: &PatchMatrix, lambda: f64) -> Result<()> {
    let y = y.matrix();
    state.update_d();
    state.update_v(y)?;
    state.update_h(lambda);
    state.update_u(y)?;
    state.update_duals();
    state.iteration += 1;
    Ok(())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

fn residuals_with(state: &AdmmState, misfit: &DMatrix<f64>) -> [f64; 4] {
    let r1 = max_abs_diff(&state.d, &state.u) / max_abs(&state.d).max(1.0);
    let r2 = max_abs_diff(&state.h, &state.v) / max_abs(&state.h).max(1.0);
    let pi_kkt = state.d.transpose() * misfit;
    let r3 = max_abs_diff(&state.pi_dual, &pi_kkt) / max_abs(&state.pi_dual).max(1.0);
    let lambda_kkt = mul_sparse_transpose(misfit, &state.h);
    let r4 = max_abs_diff(&state.lambda_dual, &lambda_kkt) / max_abs(&state.lambda_dual).max(1.0);
    [r1, r2, r3, r4]
}

/// Normalized max-norm KKT residuals
/// `[D-U, H-V, Pi - D^T(DH-Y), Lambda - (DH-Y)H^T]`.
pub fn kkt_residuals(state: &AdmmState, y: &PatchMatrix) -> [f64; 4] {
    let misfit = mul_sparse_right(&state.d, &state.h) - y.matrix();
    residuals_with(state, &misfit)
}

fn objective_with(misfit: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * misfit.norm_squared() + lambda * h.iter().map(|v| v.abs()).sum::<f64>()
}

/// `0.5 ||Y - DH||_F^2 + lambda ||H||_sum`.
pub fn objective(d: &DMatrix<f64>, h: &DMatrix<f64>, y: &PatchMatrix, lambda: f64) -> f64 {
    objective_with(&(mul_sparse_right(d, h) - y.matrix()), h, lambda)
}

/// Augmented Lagrangian at the current iterate. The indicator terms are
/// evaluated as `+inf` when `D` or `H` is infeasible.
pub fn augmented_lagrangian(state: &AdmmState, y: &PatchMatrix, lambda: f64) -> f64 {
    if state.constraint.violation(&state.d) > 1e-10 || state.h.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let fit = 0.5 * (y.matrix() - &state.u * &state.v).norm_squared();
    let sparsity = lambda * state.h.sum();
    let d_gap = &state.d - &state.u;
    let h_gap = &state.h - &state.v;
    fit + sparsity
        + state.lambda_dual.dot(&d_gap)
        + state.pi_dual.dot(&h_gap)
        + 0.5 * state.rho * (d_gap.norm_squared() + h_gap.norm_squared())
}

/// Result of a learning run: the dictionary and the final ADMM state.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub dictionary: Dictionary,
    /// Representation matrix matching `dictionary`.
    pub representation: DMatrix<f64>,
    pub state: AdmmState,
}

/// Learns an `p x s` dictionary; see [`learn_detailed`].
pub fn learn(y: &PatchMatrix, s: usize, config: &LearnConfig) -> Result<Dictionary> {
    learn_detailed(y, s, config).map(|o| o.dictionary)
}

type Snapshot = (f64, DMatrix<f64>, DMatrix<f64>, [f64; 4], usize);

/// Runs ADMM until all four KKT residuals fall below the tolerance or the
/// iteration budget is spent.
///
/// On convergence the final `D` iterate is returned. Otherwise the feasible
/// iterate with the lowest objective is returned and the provenance carries
/// `converged = false`.

pub fn learn_detailed(y: &PatchMatrix, s: usize, config: &LearnConfig) -> Result<LearnOutcome> {
    let p = y.patch_len();
    if !(config.lambda > 0.0 && config.lambda <= lambda_max(p)) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in (0, {}], got {}",
            lambda_max(p),
            config.lambda
        )));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut state = admm_init(y, s, config)?;

    // (objective, D, H, residuals, iteration) of the lowest-objective iterate
    let mut best: Option<Snapshot> = None;
    let mut converged = false;
    let mut last = (f64::INFINITY, [f64::INFINITY; 4]);
    for _ in 0..config.max_iterations {
        admm_step(&mut state, y, config.lambda)?;
        let misfit = mul_sparse_right(&state.d, &state.h) - y.matrix();
        let residuals = residuals_with(&state, &misfit);
        let obj = objective_with(&misfit, &state.h, config.lambda);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                iterations: state.iteration,
                objective: obj,
            });
        }
        last = (obj, residuals);
        if state.iteration % 100 == 0 {
            debug!(
                "admm iteration {}: objective {obj:.6e}, residuals {residuals:?}",
                state.iteration
            );
        }
        if residuals.iter().all(|&r| r < config.tolerance) {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((
                obj,
                state.d.clone(),
                state.h.clone(),
                residuals,
                state.iteration,
            ));
        }
    }

    let (objective, d, h, residuals, iterations) = match best {
        Some((obj, d, h, res, it)) if !converged => {
            warn!(
                "dictionary learning did not reach tolerance {} in {} iterations; returning iterate {it}",
                config.tolerance, config.max_iterations
            );
            (obj, d, h, res, it)
        }
        _ => (
            last.0,
            state.d.clone(),
            state.h.clone(),
            last.1,
            state.iteration,
        ),
    };
    let support = h.iter().filter(|&&v| v > 0.0).count();
    let dictionary = Dictionary::new(d, y.patch_rows(), y.patch_cols(), config.constraint)?
        .with_provenance(Provenance {
            lambda: config.lambda,
            rho: state.rho,
            tolerance: config.tolerance,
            iterations,
            residuals,
            objective,
            converged,
            support,
            source: String::new(),
        });
    Ok(LearnOutcome {
        dictionary,
        representation: h,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_patches(p_rows: usize, p_cols: usize, t: usize, seed: u64) -> PatchMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(p_rows * p_cols, t, |_, _| rng.random::<f64>());
        PatchMatrix::new(p_rows, p_cols, data).unwrap()
    }

    /// Straight-line transcription of one sweep with explicit inverses.
    fn dense_step(st: &AdmmState, y: &DMatrix<f64>, lambda: f64) -> AdmmState {
        let rho = st.rho;
        let s = st.u.ncols();
        let eye = DMatrix::<f64>::identity(s, s);
        let mut d = &st.u - &st.lambda_dual * (1.0 / rho);
        for col in 0..d.ncols() {
            let c: Vec<f64> = d.column(col).iter().map(|v| v.max(0.0)).collect();
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = (d.nrows() as f64).sqrt();
            for (i, v) in c.iter().enumerate() {
                d[(i, col)] = if n > r { v * r / n } else { *v };
            }
        }
        let v = (st.u.transpose() * &st.u + &eye * rho)
            .try_inverse()
            .unwrap()
            * (st.u.transpose() * y + &st.pi_dual + &st.h * rho);
        let mut h = &v - &st.pi_dual * (1.0 / rho);
        for e in h.iter_mut() {
            *e = if *e > lambda / rho {
                *e - lambda / rho
            } else {
                0.0
            };
        }
        let u = (y * v.transpose() + &st.lambda_dual + &d * rho)
            * (&v * v.transpose() + &eye * rho).try_inverse().unwrap();
        let lambda_dual = &st.lambda_dual + (&d - &u) * rho;
        let pi_dual = &st.pi_dual + (&h - &v) * rho;
        AdmmState {
            d,
            h,
            u,
            v,
            lambda_dual,
            pi_dual,
            rho,
            constraint: st.constraint,
            iteration: st.iteration + 1,
        }
    }

    #[test]
    fn sparse_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>());
        let h = DMatrix::from_fn(4, 7, |_, _| (rng.random::<f64>() - 0.5).max(0.0));
        let m = DMatrix::from_fn(5, 7, |_, _| rng.random::<f64>());
        assert!(max_abs_diff(&mul_sparse_right(&d, &h), &(&d * &h)) < 1e-14);
        assert!(max_abs_diff(&mul_sparse_transpose(&m, &h), &(&m * h.transpose())) < 1e-14);
    }

    #[test]
    fn lambda_bound_is_patch_length() {
        assert_eq!(lambda_max(25), 25.0);
        assert_eq!(lambda_max(400), 400.0);
    }

    #[test]
    fn init_shapes_and_determinism() {
        let y = random_patches(2, 2, 10, 1);
        let cfg = LearnConfig::default();
        let st = admm_init(&y, 6, &cfg).unwrap();
        assert_eq!(st.d.shape(), (4, 6));
        assert_eq!(st.v.shape(), (6, 10));
        for j in 0..10 {
            for i in 0..6 {
                assert_eq!(st.v[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(st.h, st.v);
        assert!(ConstraintSet::Ball2.violation(&st.d) <= 0.0);
        assert_eq!(admm_init(&y, 6, &cfg).unwrap(), st);
        assert!(matches!(
            admm_init(&y, 11, &cfg),
            Err(Error::InsufficientData {
                requested: 11,
                available: 10
            })
        ));
    }

    #[test]
    fn step_matches_dense_transcription() {
        let y = random_patches(2, 2, 6, 7);
        let cfg = LearnConfig {
            lambda: 0.3,
            rho: Some(0.7),
            ..LearnConfig::default()
        };
        let mut st = admm_init(&y, 3, &cfg).unwrap();
        // move away from the symmetric start so every term is exercised
        for _ in 0..3 {
            admm_step(&mut st, &y, cfg.lambda).unwrap();
        }
        let expected = dense_step(&st, y.matrix(), cfg.lambda);
        admm_step(&mut st, &y, cfg.lambda).unwrap();
        for (a, b) in [
            (&st.d, &expected.d),
            (&st.h, &expected.h),
            (&st.u, &expected.u),
            (&st.v, &expected.v),
            (&st.lambda_dual, &expected.lambda_dual),
            (&st.pi_dual, &expected.pi_dual),
        ] {
            assert!(max_abs_diff(a, b) < 1e-10, "{}", max_abs_diff(a, b));
        }
    }

    #[test]
    fn zero_data_drives_h_to_zero() {
        let y = PatchMatrix::new(2, 2, DMatrix::zeros(4, 8)).unwrap();
        let cfg = LearnConfig {
            lambda: 0.1,
            rho: Some(1.0),
            ..LearnConfig::default()
        };
        let mut st = admm_init(&y, 4, &cfg).unwrap();
        st.u = DMatrix::from_element(4, 4, 0.5);
        st.d = st.u.clone();
        for _ in 0..200 {
            admm_step(&mut st, &y, cfg.lambda).unwrap();
        }
        assert!(max_abs(&st.h) < 1e-8);
    }

    #[test]
    fn alternating_least_squares_is_monotone() {
        let y = random_patches(2, 3, 12, 3);
        let cfg = LearnConfig::default();
        let mut st = admm_init(&y, 4, &cfg).unwrap();
        let fit = |st: &AdmmState| 0.5 * (y.matrix() - &st.u * &st.v).norm_squared();
        let mut prev = fit(&st);
        for _ in 0..30 {
            st.h = st.v.clone();
            st.update_v(y.matrix()).unwrap();
            let after_v = fit(&st);
            assert!(after_v <= prev + 1e-12);
            st.d = st.u.clone();
            st.update_u(y.matrix()).unwrap();
            let after_u = fit(&st);
            assert!(after_u <= after_v + 1e-12);
            prev = after_u;
        }
    }

    #[test]
    fn block_updates_decrease_augmented_lagrangian() {
        let y = random_patches(2, 2, 15, 5);
        let lambda = 0.2;
        let cfg = LearnConfig::default();
        let mut st = admm_init(&y, 5, &cfg).unwrap();
        for _ in 0..5 {
            admm_step(&mut st, &y, lambda).unwrap();
        }
        for _ in 0..10 {
            let l0 = augmented_lagrangian(&st, &y, lambda);
            st.update_d();
            let l1 = augmented_lagrangian(&st, &y, lambda);
            st.update_v(y.matrix()).unwrap();
            let l2 = augmented_lagrangian(&st, &y, lambda);
            st.update_h(lambda);
            let l3 = augmented_lagrangian(&st, &y, lambda);
            st.update_u(y.matrix()).unwrap();
            let l4 = augmented_lagrangian(&st, &y, lambda);
            for (a, b) in [(l0, l1), (l1, l2), (l2, l3), (l3, l4)] {
                assert!(b.is_finite());
                assert!(b <= a + 1e-10 * a.abs().max(1.0), "{b} > {a}");
            }
            st.update_duals();
            assert!(ConstraintSet::Ball2.violation(&st.d) <= 1e-10);
            assert!(st.h.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn manufactured_kkt_point_has_zero_residuals() {
        let y = random_patches(2, 2, 9, 11);
        let cfg = LearnConfig::default();
        let mut st = admm_init(&y, 3, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        st.d = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>());
        st.h = DMatrix::from_fn(3, 9, |_, _| rng.random::<f64>());
        st.u = st.d.clone();
        st.v = st.h.clone();
        let misfit = &st.d * &st.h - y.matrix();
        st.lambda_dual = &misfit * st.h.transpose();
        st.pi_dual = st.d.transpose() * &misfit;
        assert_eq!(kkt_residuals(&st, &y), [0.0; 4]);
    }

    #[test]
    fn init_residuals_finite() {
        let y = random_patches(3, 3, 20, 4);
        let st = admm_init(&y, 10, &LearnConfig::default()).unwrap();
        for r in kkt_residuals(&st, &y) {
            assert!(r.is_finite() && r >= 0.0);
        }
    }

    #[test]
    fn lambda_at_bound_gives_empty_representation() {
        let y = random_patches(5, 5, 60, 9);
        let cfg = LearnConfig {
            lambda: lambda_max(25),
            ..LearnConfig::default()
        };
        let out = learn_detailed(&y, 30, &cfg).unwrap();
        assert!(
            out.dictionary.provenance.converged,
            "{:?}",
            out.dictionary.provenance
        );
        assert!(max_abs(&out.representation) <= cfg.tolerance);
        assert_eq!(out.dictionary.provenance.support, 0);
    }

    #[test]
    fn small_lambda_beats_trivial_feasible_point() {
        let y = random_patches(2, 2, 6, 13);
        let cfg = LearnConfig {
            lambda: 1e-3,
            max_iterations: 3000,
            ..LearnConfig::default()
        };
        let out = learn_detailed(&y, 6, &cfg).unwrap();
        // D = Y, H = I is feasible with objective lambda * t
        let trivial = cfg.lambda * 6.0;
        assert!(out.dictionary.provenance.objective <= trivial + 1e-6);
    }

    #[test]
    fn learn_validates_lambda_and_is_deterministic() {
        let y = random_patches(2, 2, 30, 21);
        let bad = LearnConfig {
            lambda: 0.0,
            ..LearnConfig::default()
        };
        assert!(learn(&y, 5, &bad).is_err());
        let too_big = LearnConfig {
            lambda: 4.5,
            ..LearnConfig::default()
        };
        assert!(learn(&y, 5, &too_big).is_err());
        let cfg = LearnConfig {
            lambda: 0.5,
            max_iterations: 300,
            constraint: ConstraintSet::BoxInf,
            ..LearnConfig::default()
        };
        let a = learn(&y, 5, &cfg).unwrap();
        let b = learn(&y, 5, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(ConstraintSet::BoxInf.violation(a.atoms()) <= 1e-10);
    }
}
