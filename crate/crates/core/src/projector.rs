//! Parallel-beam scan geometry, exact ray tracing and data simulation.
//!
//! The image occupies the square `[-N/2, N/2]^2` with unit pixels; `x` grows
//! with the column index and `y` decreases with the row index (row 0 on top).
//! A projection at angle `theta` consists of `N_r = floor(sqrt(2) N)` parallel
//! lines `{ t n + s d }` with normal `n = (cos theta, sin theta)` and
//! direction `d = (-sin theta, cos theta)`. The detector spans the grid
//! diagonal and the offsets `t` are the centres of `N_r` equal bins on it.
//! Row `k * N_r + r` of the system matrix belongs to angle `k`, ray `r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::image::GrayImage;
use crate::sparse::CsrMatrix;

/// Intersections shorter than this are dropped.
pub const GRAZING_TOL: f64 = 1e-12;

/// Parallel-beam acquisition geometry for a square image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    size: usize,
    angles_deg: Vec<f64>,
    rays: usize,
    spacing: f64,
}

impl ScanGeometry {
    /// Explicit geometry from a list of angles in degrees.
    pub fn with_angles(size: usize, angles_deg: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::UnsupportedGeometry(
                "image size must be positive".into(),
            ));
        }
        if angles_deg.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one projection angle is required".into(),
            ));
        }
        if angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("angles must be finite".into()));
        }
        let rays = rays_per_projection(size);
        let spacing = std::f64::consts::SQRT_2 * size as f64 / rays as f64;
        Ok(Self {
            size,
            angles_deg,
            rays,
            spacing,
        })
    }

    /// Image side length `N`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn num_projections(&self) -> usize {
        self.angles_deg.len()
    }

    /// Rays per projection `N_r`.
    pub fn rays_per_projection(&self) -> usize {
        self.rays
    }

    /// Distance between neighbouring rays in pixel units.
    pub fn ray_spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of measurements `m = N_r N_p`.
    pub fn num_rays(&self) -> usize {
        self.rays * self.angles_deg.len()
    }

    /// Number of pixels `n = N^2`.
    pub fn num_pixels(&self) -> usize {
        self.size * self.size
    }

    /// Signed detector offset of ray `r` within a projection.
    pub fn offset(&self, r: usize) -> f64 {
        (r as f64 - (self.rays as f64 - 1.0) / 2.0) * self.spacing
    }

    /// A point on ray `i` and its unit direction.
    pub fn ray(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        let k = i / self.rays;
        let r = i % self.rays;
        let theta = self.angles_deg[k].to_radians();
        let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
        let t = self.offset(r);
        ([t * cos, t * sin], [-sin, cos])
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else {
        v
    }
}

/// `floor(sqrt(2) N)`.
pub fn rays_per_projection(size: usize) -> usize {
    ((std::f64::consts::SQRT_2 * size as f64).floor() as usize).max(1)
}

/// Uniform angles on the half-open range `[angle_start, angle_end)`.
pub fn make_geometry(
    rows: usize,
    cols: usize,
    projections: usize,
    angle_start: f64,
    angle_end: f64,
) -> Result<ScanGeometry> {
    if rows != cols {
        return Err(Error::UnsupportedGeometry(format!(
            "only square images are supported, got {rows}x{cols}"
        )));
    }
    if projections == 0 {
        return Err(Error::InvalidParameter(
            "number of projections must be at least 1".into(),
        ));
    }
    if !(angle_end > angle_start) {
        return Err(Error::InvalidParameter(format!(
            "angle range [{angle_start}, {angle_end}) is empty"
        )));
    }
    let step = (angle_end - angle_start) / projections as f64;
    let angles = (0..projections)
        .map(|k| angle_start + k as f64 * step)
        .collect();
    ScanGeometry::with_angles(rows, angles)
}

/// Parameter interval `[s_min, s_max]` where the line `origin + s dir` lies
/// inside the square `[-half, half]^2`, if any.
fn clip_to_square(origin: [f64; 2], dir: [f64; 2], half: f64) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for axis in 0..2 {
        if dir[axis] == 0.0 {
            if origin[axis] < -half || origin[axis] > half {
                return None;
            }
        } else {
            let a = (-half - origin[axis]) / dir[axis];
            let b = (half - origin[axis]) / dir[axis];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    (hi - lo > GRAZING_TOL).then_some((lo, hi))
}

/// Exact intersection lengths of a line with the pixels of an `N x N` grid.
///
/// Parametric (Siddon-style) marching: all crossings of the line with grid
/// lines inside the image are sorted, and each sub-segment is attributed to
/// the pixel containing its midpoint. Returns `(column-major pixel, length)`
/// pairs in marching order; segments shorter than [`GRAZING_TOL`] are dropped.
pub fn trace_ray(size: usize, origin: [f64; 2], dir: [f64; 2]) -> Vec<(usize, f64)> {
    let half = size as f64 / 2.0;
    let Some((s_min, s_max)) = clip_to_square(origin, dir, half) else {
        return Vec::new();
    };
    let mut params = Vec::with_capacity(2 * size + 4);
    params.push(s_min);
    params.push(s_max);
    for axis in 0..2 {
        if dir[axis] == 0.0 {
            continue;
        }
        for k in 0..=size {
            let line = -half + k as f64;
            let s = (line - origin[axis]) / dir[axis];
            if s > s_min && s < s_max {
                params.push(s);
            }
        }
    }
    params.sort_by(f64::total_cmp);

    let last = size as isize - 1;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in params.windows(2) {
        let len = w[1] - w[0];
        if len <= GRAZING_TOL {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let mx = origin[0] + mid * dir[0];
        let my = origin[1] + mid * dir[1];
        let col = ((mx + half).floor() as isize).clamp(0, last) as usize;
        let row = ((half - my).floor() as isize).clamp(0, last) as usize;
        let pixel = row + col * size;
        match out.last_mut() {
            Some((p, l)) if *p == pixel => *l += len,
            _ => out.push((pixel, len)),
        }
    }
    out
}

/// Assembles the `m x n` matrix of ray/pixel intersection lengths.
pub fn assemble_matrix(geom: &ScanGeometry) -> CsrMatrix {
    let rows: Vec<Vec<(usize, f64)>> = (0..geom.num_rays())
        .into_par_iter()
        .map(|i| {
            let (origin, dir) = geom.ray(i);
            trace_ray(geom.size(), origin, dir)
        })
        .collect();
    CsrMatrix::from_rows(geom.num_pixels(), rows).expect("traced pixels lie inside the grid")
}

/// Simulated measurements `b = A x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Vec<f64>,
    pub seed: u64,
    /// Requested `||e|| / ||A x||`.
    pub rel_noise: f64,
    /// Realized `||e|| / ||A x||` (0 when `A x = 0`).
    pub achieved_noise: f64,
}

/// Adds white Gaussian noise scaled to an exact relative level.
///
/// The noise vector is drawn entry by entry from `StandardNormal` using a
/// ChaCha8 stream seeded by `seed`, then rescaled so that
/// `||e|| = rel_noise ||A x||`. With `A x = 0` no noise is added.
pub fn simulate(a: &CsrMatrix, x_exact: &GrayImage, rel_noise: f64, seed: u64) -> Result<Sinogram> {
    if !(rel_noise >= 0.0) || !rel_noise.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "relative noise level must be a nonnegative number, got {rel_noise}"
        )));
    }
    if x_exact.len() != a.cols() {
        return dim_err(format!(
            "image has {} pixels but the system matrix has {} columns",
            x_exact.len(),
            a.cols()
        ));
    }
    let clean = a.mul_vec(x_exact.as_slice())?;
    let clean_norm = norm(&clean);
    let mut data = clean;
    let mut achieved = 0.0;
    if rel_noise > 0.0 && clean_norm > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..data.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let scale = rel_noise * clean_norm / norm(&noise);
        let e: Vec<f64> = noise.iter().map(|v| v * scale).collect();
        achieved = norm(&e) / clean_norm;
        for (b, ei) in data.iter_mut().zip(&e) {
            *b += ei;
        }
    }
    Ok(Sinogram {
        data,
        seed,
        rel_noise,
        achieved_noise: achieved,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
