//! Block reordering, the block-diagonal dictionary operator and the
//! block-boundary difference operator.

use crate::error::{dim_err, Result};
use crate::image::PatchGeometry;
use nalgebra::{DMatrix, DMatrixView};

/// Reorders a column-major image vector into block-by-block order.
///
/// Position `k` of the block ordering holds pixel `forward[k]` of the image.
/// Blocks run column-major over the block grid, pixels column-major inside
/// each block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    geometry: PatchGeometry,
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl BlockPermutation {
    pub fn new(geometry: PatchGeometry) -> Self {
        let m = geometry.image_rows();
        let (pr, pc) = (geometry.patch_rows(), geometry.patch_cols());
        let (grid_rows, grid_cols) = geometry.grid();
        let mut forward = Vec::with_capacity(geometry.num_pixels());
        for bc in 0..grid_cols {
            for br in 0..grid_rows {
                for lc in 0..pc {
                    for lr in 0..pr {
                        let row = br * pr + lr;
                        let col = bc * pc + lc;
                        forward.push(row + col * m);
                    }
                }
            }
        }
        let mut inverse = vec![0; forward.len()];
        for (k, &i) in forward.iter().enumerate() {
            inverse[i] = k;
        }
        Self {
            geometry,
            forward,
            inverse,
        }
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Image index stored at block-order position `k`.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// Block-order position of image index `i`.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// `Pi x`: image order to block order.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(self.forward.iter().map(|&i| x[i]).collect())
    }

    /// `Pi^T z`: block order back to image order.
    pub fn apply_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        Ok(self.inverse.iter().map(|&k| z[k]).collect())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.forward.len() {
            return dim_err(format!(
                "vector of length {len} does not match {} pixels",
                self.forward.len()
            ));
        }
        Ok(())
    }
}

/// Builds the block permutation for an `rows x cols` image and
/// `patch_rows x patch_cols` blocks.
pub fn block_permutation(
    rows: usize,
    cols: usize,
    patch_rows: usize,
    patch_cols: usize,
) -> Result<BlockPermutation> {
    Ok(BlockPermutation::new(PatchGeometry::new(
        rows, cols, patch_rows, patch_cols,
    )?))
}

fn check_atoms(atoms: &DMatrix<f64>, perm: &BlockPermutation) -> Result<()> {
    let p = perm.geometry().patch_len();
    if atoms.nrows() != p {
        return dim_err(format!(
            "dictionary has {} rows but blocks hold {p} pixels",
            atoms.nrows()
        ));
    }
    Ok(())
}

/// `Pi^T (I kron D) alpha`, computed as one `p x s` by `s x q` product.
///
/// `atoms` is the `p x s` dictionary matrix; `alpha` stacks the `q` blocks'
/// coefficient vectors.
pub fn apply_block_dictionary(
    atoms: &DMatrix<f64>,
    alpha: &[f64],
    perm: &BlockPermutation,
) -> Result<Vec<f64>> {
    check_atoms(atoms, perm)?;
    let s = atoms.ncols();
    let q = perm.geometry().num_blocks();
    if alpha.len() != s * q {
        return dim_err(format!(
            "coefficient vector has length {}, expected s*q = {}",
            alpha.len(),
            s * q
        ));
    }
    let coeffs = DMatrixView::from_slice(alpha, s, q);
    let blocks: DMatrix<f64> = atoms * coeffs;
    perm.apply_transpose(blocks.as_slice())
}

/// `(I kron D^T) Pi v`, the adjoint of [`apply_block_dictionary`].
pub fn apply_block_dictionary_adjoint(
    atoms: &DMatrix<f64>,
    v: &[f64],
    perm: &BlockPermutation,
) -> Result<Vec<f64>> {
    check_atoms(atoms, perm)?;
    let p = atoms.nrows();
    let q = perm.geometry().num_blocks();
    let permuted = perm.apply(v)?;
    let blocks = DMatrixView::from_slice(&permuted, p, q);
    let coeffs: DMatrix<f64> = atoms.transpose() * blocks;
    Ok(coeffs.as_slice().to_vec())
}

/// Signed differences across block boundaries.
///
/// Each row pairs two 4-neighbouring pixels lying in different blocks, with
/// `+1` on the pixel of smaller column-major index and `-1` on the other.
/// Vertical neighbours come first (by column, then by boundary), followed by
/// horizontal neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryOperator {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl BoundaryOperator {
    pub fn new(geometry: &PatchGeometry) -> Self {
        let m = geometry.image_rows();
        let nc = geometry.image_cols();
        let (pr, pc) = (geometry.patch_rows(), geometry.patch_cols());
        let mut pairs = Vec::new();
        for c in 0..nc {
            for r in (pr..m).step_by(pr) {
                pairs.push(((r - 1) + c * m, r + c * m));
            }
        }
        for c in (pc..nc).step_by(pc) {
            for r in 0..m {
                pairs.push((r + (c - 1) * m, r + c * m));
            }
        }
        Self {
            n: geometry.num_pixels(),
            pairs,
        }
    }

    /// Number of rows (`l`).
    pub fn rows(&self) -> usize {
        self.pairs.len()
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// Pixel pairs `(plus, minus)` of each row.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `L v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        Ok(self.pairs.iter().map(|&(u, w)| v[u] - v[w]).collect())
    }

    /// `L^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.pairs.len() {
            return dim_err(format!(
                "vector of length {} does not match {} boundary rows",
                y.len(),
                self.pairs.len()
            ));
        }
        let mut out = vec![0.0; self.n];
        for (&(u, w), &yi) in self.pairs.iter().zip(y) {
            out[u] += yi;
            out[w] -= yi;
        }
        Ok(out)
    }

    /// `L^T L v` without the intermediate allocation of `L v`.
    pub fn normal(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        let mut out = vec![0.0; self.n];
        for &(u, w) in &self.pairs {
            let d = v[u] - v[w];
            out[u] += d;
            out[w] -= d;
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return dim_err(format!(
                "vector of length {len} does not match {} pixels",
                self.n
            ));
        }
        Ok(())
    }
}

/// Builds the boundary operator for the given image and block sizes.
pub fn boundary_operator(
    rows: usize,
    cols: usize,
    patch_rows: usize,
    patch_cols: usize,
) -> Result<BoundaryOperator> {
    Ok(BoundaryOperator::new(&PatchGeometry::new(
        rows, cols, patch_rows, patch_cols,
    )?))
}

/// Block-boundary penalty `0.5 ||L v||^2 / l`, zero when there are no boundaries.
pub fn psi(v: &[f64], op: &BoundaryOperator) -> Result<f64> {
    op.check(v.len())?;
    if op.rows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = op
        .pairs
        .iter()
        .map(|&(u, w)| {
            let d = v[u] - v[w];
            d * d
        })
        .sum();
    Ok(0.5 * sum / op.rows() as f64)
}
