//! Images, patch geometry and training patch extraction.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};

/// A nonnegative gray-level image stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from a column-major value vector.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return dim_err("image must have at least one row and one column");
        }
        if data.len() != rows * cols {
            return dim_err(format!(
                "expected {} values for a {rows}x{cols} image, got {}",
                rows * cols,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "image values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds an image from row-major values, e.g. as read from a raster file.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return dim_err(format!(
                "expected {} values for a {rows}x{cols} image, got {}",
                rows * cols,
                values.len()
            ));
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[r + c * rows] = values[r * cols + c];
            }
        }
        Self::from_column_major(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row + col * self.rows]
    }

    /// Column-major vectorization.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c));
            }
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Copies the `height x width` window whose top-left pixel is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || row + height > self.rows || col + width > self.cols {
            return dim_err(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{} image",
                self.rows, self.cols
            ));
        }
        let mut data = Vec::with_capacity(height * width);
        for c in col..col + width {
            let start = row + c * self.rows;
            data.extend_from_slice(&self.data[start..start + height]);
        }
        Ok(Self {
            rows: height,
            cols: width,
            data,
        })
    }
}

/// Patch size together with the image size it tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    image_rows: usize,
    image_cols: usize,
    patch_rows: usize,
    patch_cols: usize,
}

impl PatchGeometry {
    /// Rejects image sizes that are not multiples of the patch size.
    pub fn new(
        image_rows: usize,
        image_cols: usize,
        patch_rows: usize,
        patch_cols: usize,
    ) -> Result<Self> {
        if patch_rows == 0 || patch_cols == 0 || image_rows == 0 || image_cols == 0 {
            return dim_err("image and patch sizes must be positive");
        }
        if !image_rows.is_multiple_of(patch_rows) || !image_cols.is_multiple_of(patch_cols) {
            return dim_err(format!(
                "{image_rows}x{image_cols} image is not divisible into {patch_rows}x{patch_cols} blocks"
            ));
        }
        Ok(Self {
            image_rows,
            image_cols,
            patch_rows,
            patch_cols,
        })
    }

    pub fn image_rows(&self) -> usize {
        self.image_rows
    }

    pub fn image_cols(&self) -> usize {
        self.image_cols
    }

    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    /// Pixels per patch.
    pub fn patch_len(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// Shape of the block grid as (block rows, block columns).
    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_rows / self.patch_rows,
            self.image_cols / self.patch_cols,
        )
    }

    /// Number of blocks.
    pub fn num_blocks(&self) -> usize {
        let (gr, gc) = self.grid();
        gr * gc
    }

    /// Number of image pixels.
    pub fn num_pixels(&self) -> usize {
        self.image_rows * self.image_cols
    }
}

/// Training patches, one vectorized patch per column, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    patch_rows: usize,
    patch_cols: usize,
    data: DMatrix<f64>,
}

impl PatchMatrix {
    pub fn new(patch_rows: usize, patch_cols: usize, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != patch_rows * patch_cols {
            return dim_err(format!(
                "patch matrix has {} rows, expected {}",
                data.nrows(),
                patch_rows * patch_cols
            ));
        }
        if data.ncols() == 0 {
            return dim_err("patch matrix needs at least one column");
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "patch values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            patch_rows,
            patch_cols,
            data,
        })
    }

    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    /// Rows per column (`p`).
    pub fn patch_len(&self) -> usize {
        self.data.nrows()
    }

    /// Number of patches (`t`).
    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Extracts all `patch_rows x patch_cols` windows on a `stride` lattice.
///
/// Windows are enumerated column-major over their top-left corners. With
/// `limit` set and fewer windows than available, a uniform subsample without
/// replacement is drawn from a ChaCha8 stream seeded with `seed`; the chosen
/// windows keep their lattice order. Values are divided by the image maximum
/// when that maximum exceeds one.
pub fn extract_patches(
    img: &GrayImage,
    patch_rows: usize,
    patch_cols: usize,
    stride: usize,
    limit: Option<usize>,
    seed: u64,
) -> Result<PatchMatrix> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    if patch_rows == 0 || patch_cols == 0 {
        return dim_err("patch size must be positive");
    }
    if patch_rows > img.rows() || patch_cols > img.cols() {
        return dim_err(format!(
            "{patch_rows}x{patch_cols} patch does not fit in {}x{} image",
            img.rows(),
            img.cols()
        ));
    }
    let row_starts: Vec<usize> = (0..=img.rows() - patch_rows).step_by(stride).collect();
    let col_starts: Vec<usize> = (0..=img.cols() - patch_cols).step_by(stride).collect();
    let corners: Vec<(usize, usize)> = col_starts
        .iter()
        .flat_map(|&c| row_starts.iter().map(move |&r| (r, c)))
        .collect();

    let chosen: Vec<(usize, usize)> = match limit {
        Some(0) => return dim_err("patch limit must be positive"),
        Some(k) if k < corners.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picks = index::sample(&mut rng, corners.len(), k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| corners[i]).collect()
        }
        _ => corners,
    };

    let max = img.max_value();
    let scale = if max > 1.0 { 1.0 / max } else { 1.0 };
    let p = patch_rows * patch_cols;
    let mut data = DMatrix::zeros(p, chosen.len());
    for (j, &(r0, c0)) in chosen.iter().enumerate() {
        let mut col = data.column_mut(j);
        for lc in 0..patch_cols {
            for lr in 0..patch_rows {
                col[lr + lc * patch_rows] = img.get(r0 + lr, c0 + lc) * scale;
            }
        }
    }
    PatchMatrix::new(patch_rows, patch_cols, data)
}
