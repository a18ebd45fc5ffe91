//! Procedural textured test images.
//!
//! Produces a field of overlapping shaded elliptical grains on a smoothly
//! varying background with a faint surface ripple, all values in `[0, 1]`.
//! Different windows of one large image share the same statistics, so one
//! part can serve as training source and a disjoint part as ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct GrainParams {
    /// Grains per 10,000 pixels.
    pub density: f64,
    /// Range of the grain semi-axes in pixels.
    pub radius: (f64, f64),
    /// Range of grain peak brightness.
    pub brightness: (f64, f64),
    /// Background level.
    pub background: f64,
    /// Amplitude of the surface ripple.
    pub ripple: f64,
}

impl Default for GrainParams {
    fn default() -> Self {
        Self {
            density: 14.0,
            radius: (4.0, 12.0),
            brightness: (0.55, 0.95),
            background: 0.18,
            ripple: 0.04,
        }
    }
}

struct Grain {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    peak: f64,
    tilt: (f64, f64),
}

/// Generates a `rows x cols` grain image from `seed`.
pub fn grains(rows: usize, cols: usize, params: &GrainParams, seed: u64) -> Result<GrayImage> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("phantom size must be positive".into()));
    }
    if !(params.radius.0 > 0.0 && params.radius.1 >= params.radius.0) {
        return Err(Error::InvalidParameter("invalid grain radius range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = ((rows * cols) as f64 * params.density / 10_000.0).round() as usize;
    let margin = params.radius.1;
    let grains: Vec<Grain> = (0..count)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Grain {
                cy: rng.random_range(-margin..rows as f64 + margin),
                cx: rng.random_range(-margin..cols as f64 + margin),
                a: rng.random_range(params.radius.0..=params.radius.1),
                b: rng.random_range(params.radius.0..=params.radius.1),
                cos: angle.cos(),
                sin: angle.sin(),
                peak: rng.random_range(params.brightness.0..=params.brightness.1),
                tilt: (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)),
            }
        })
        .collect();

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.005..0.03),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let ripple_freq: (f64, f64) = (rng.random_range(0.6..0.9), rng.random_range(0.6..0.9));

    let mut data = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut v = params.background;
            for &(freq, dir, phase, amp) in &waves {
                let proj = x * dir.cos() + y * dir.sin();
                v += 0.05 * amp * (freq * proj + phase).sin();
            }
            // later grains are painted on top
            for g in &grains {
                let (dy, dx) = (y - g.cy, x - g.cx);
                if dy.abs() > g.a.max(g.b) + 1.0 || dx.abs() > g.a.max(g.b) + 1.0 {
                    continue;
                }
                let u = (dx * g.cos + dy * g.sin) / g.a;
                let w = (-dx * g.sin + dy * g.cos) / g.b;
                let rr = u * u + w * w;
                if rr <= 1.0 {
                    let shade = 1.0 - 0.45 * rr + g.tilt.0 * u + g.tilt.1 * w;
                    v = g.peak * shade;
                }
            }
            v += params.ripple * (ripple_freq.0 * x).sin() * (ripple_freq.1 * y).sin();
            data[r + c * rows] = v.clamp(0.0, 1.0);
        }
    }
    GrayImage::from_column_major(rows, cols, data)
}
