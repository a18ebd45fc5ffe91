//! The learned patch dictionary and its constraint sets.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::dictlearn::prox;
use crate::error::{dim_err, Error, Result};

/// Compact convex set the dictionary columns are confined to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintSet {
    /// Every entry in `[0, 1]`.
    BoxInf,
    /// Nonnegative columns with Euclidean norm at most `sqrt(p)`.
    Ball2,
}

impl ConstraintSet {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintSet::BoxInf => "box",
            ConstraintSet::Ball2 => "ball2",
        }
    }

    /// Projects every column of `d` onto the set, in place.
    pub fn project(self, d: &mut DMatrix<f64>) {
        match self {
            ConstraintSet::BoxInf => prox::project_box_in_place(d.as_mut_slice()),
            ConstraintSet::Ball2 => {
                for mut col in d.column_iter_mut() {
                    let projected = prox::project_ball2_column(col.as_slice());
                    col.copy_from_slice(&projected);
                }
            }
        }
    }

    /// Largest constraint violation over all columns of `d` (0 when feasible).
    pub fn violation(self, d: &DMatrix<f64>) -> f64 {
        let neg = d.iter().fold(0.0_f64, |acc, v| acc.max(-v));
        match self {
            ConstraintSet::BoxInf => d.iter().fold(neg, |acc, v| acc.max(v - 1.0)),
            ConstraintSet::Ball2 => {
                let radius = (d.nrows() as f64).sqrt();
                d.column_iter()
                    .fold(neg, |acc, col| acc.max(col.norm() - radius))
            }
        }
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstraintSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "box" | "boxinf" | "inf" => Ok(ConstraintSet::BoxInf),
            "ball2" | "ball" | "l2" => Ok(ConstraintSet::Ball2),
            other => Err(Error::InvalidParameter(format!(
                "unknown constraint set '{other}' (expected box or ball2)"
            ))),
        }
    }
}

/// How a dictionary was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub lambda: f64,
    pub rho: f64,
    pub tolerance: f64,
    pub iterations: usize,
    /// Normalized KKT residuals at the returned iterate.
    pub residuals: [f64; 4],
    /// `0.5 ||Y - DH||_F^2 + lambda ||H||_sum` at the returned iterate.
    pub objective: f64,
    pub converged: bool,
    /// Nonzero count of the representation matrix at the returned iterate.
    pub support: usize,
    /// Free-form identifier of the training data (e.g. a content hash).
    pub source: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            rho: 0.0,
            tolerance: 0.0,
            iterations: 0,
            residuals: [0.0; 4],
            objective: 0.0,
            converged: true,
            support: 0,
            source: String::new(),
        }
    }
}

/// A `p x s` nonnegative dictionary of vectorized `patch_rows x patch_cols` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    patch_rows: usize,
    patch_cols: usize,
    constraint: ConstraintSet,
    pub provenance: Provenance,
}

impl Dictionary {
    /// Wraps a matrix, checking shape and feasibility (within 1e-10).
    pub fn new(
        atoms: DMatrix<f64>,
        patch_rows: usize,
        patch_cols: usize,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        if atoms.nrows() != patch_rows * patch_cols {
            return dim_err(format!(
                "dictionary has {} rows but patches are {patch_rows}x{patch_cols}",
                atoms.nrows()
            ));
        }
        if atoms.ncols() == 0 {
            return dim_err("dictionary needs at least one column");
        }
        let violation = constraint.violation(&atoms);
        if !(violation <= 1e-10) {
            return Err(Error::InvalidParameter(format!(
                "dictionary violates the {constraint} constraint by {violation:e}"
            )));
        }
        Ok(Self {
            atoms,
            patch_rows,
            patch_cols,
            constraint,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// `p x p` identity dictionary; its cone is the whole nonnegative orthant.
    pub fn identity(patch_rows: usize, patch_cols: usize) -> Self {
        let p = patch_rows * patch_cols;
        Self {
            atoms: DMatrix::identity(p, p),
            patch_rows,
            patch_cols,
            constraint: ConstraintSet::BoxInf,
            provenance: Provenance::default(),
        }
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    /// Rows (`p`).
    pub fn patch_len(&self) -> usize {
        self.atoms.nrows()
    }

    /// Columns (`s`).
    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn constraint(&self) -> ConstraintSet {
        self.constraint
    }
}
