//! Proximal maps and projections used by the ADMM updates.

use nalgebra::DMatrix;

/// Dykstra stops once successive iterates move less than this.
pub const DYKSTRA_TOL: f64 = 1e-12;
const DYKSTRA_MAX_ITER: usize = 10_000;

/// `max(0, x - tau)` entrywise: soft thresholding followed by projection
/// onto the nonnegative orthant.
pub fn soft_threshold_nonneg(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau >= 0.0, "threshold must be nonnegative");
    x.map(|v| (v - tau).max(0.0))
}

/// Entrywise clamp to `[0, 1]`.
pub fn project_box(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.clamp(0.0, 1.0))
}

pub(crate) fn project_box_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn project_orthant(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn project_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= radius {
        x.to_vec()
    } else {
        let scale = radius / norm;
        x.iter().map(|v| v * scale).collect()
    }
}

/// Euclidean projection onto `{z >= 0, ||z|| <= sqrt(p)}` by Dykstra's
/// alternating projections between the orthant and the ball.
pub fn project_ball2_column(d: &[f64]) -> Vec<f64> {
    let radius = (d.len() as f64).sqrt();
    let mut x = d.to_vec();
    let mut p = vec![0.0; d.len()];
    let mut q = vec![0.0; d.len()];
    for _ in 0..DYKSTRA_MAX_ITER {
        let shifted: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let y = project_orthant(&shifted);
        for ((pi, si), yi) in p.iter_mut().zip(&shifted).zip(&y) {
            *pi = si - yi;
        }
        let shifted: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        let next = project_ball(&shifted, radius);
        for ((qi, si), ni) in q.iter_mut().zip(&shifted).zip(&next) {
            *qi = si - ni;
        }
        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        x = next;
        if change < DYKSTRA_TOL {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip_then_scale(d: &[f64]) -> Vec<f64> {
        let clipped: Vec<f64> = d.iter().map(|v| v.max(0.0)).collect();
        let norm = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = (d.len() as f64).sqrt();
        if norm > radius {
            clipped.iter().map(|v| v * radius / norm).collect()
        } else {
            clipped
        }
    }

    #[test]
    fn soft_threshold_examples() {
        let x = DMatrix::from_column_slice(1, 3, &[2.0, -3.0, 0.25]);
        let y = soft_threshold_nonneg(&x, 0.5);
        assert_eq!(y.as_slice(), &[1.5, 0.0, 0.0]);
        let z = soft_threshold_nonneg(&x, 0.0);
        assert_eq!(z.as_slice(), &[2.0, 0.0, 0.25]);
    }

    #[test]
    fn box_examples() {
        let x = DMatrix::from_column_slice(1, 3, &[0.5, -2.0, 7.0]);
        let y = project_box(&x);
        assert_eq!(y.as_slice(), &[0.5, 0.0, 1.0]);
        assert_eq!(project_box(&y), y);
    }

    #[test]
    fn box_projection_is_nearest_on_grid() {
        let targets = [(-0.7, 0.4), (1.3, 2.0), (0.2, 0.9), (-1.0, -1.0)];
        for (a, b) in targets {
            let p = project_box(&DMatrix::from_column_slice(2, 1, &[a, b]));
            let best = p
                .iter()
                .zip([a, b])
                .map(|(x, t)| (x - t).powi(2))
                .sum::<f64>();
            for i in 0..=200 {
                for j in 0..=200 {
                    let (u, v) = (i as f64 / 200.0, j as f64 / 200.0);
                    let dist = (u - a).powi(2) + (v - b).powi(2);
                    assert!(best <= dist + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ball2_examples() {
        let z = project_ball2_column(&[3.0, 4.0]);
        let s = 2f64.sqrt() / 5.0;
        assert!((z[0] - 3.0 * s).abs() < 1e-12);
        assert!((z[1] - 4.0 * s).abs() < 1e-12);
        assert!((z[0] - 0.8485).abs() < 1e-4 && (z[1] - 1.1314).abs() < 1e-4);
        assert_eq!(project_ball2_column(&[0.5, 1.0]), vec![0.5, 1.0]);
        assert_eq!(project_ball2_column(&[-1.0, -1.0]), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn dykstra_matches_closed_form(d in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let a = project_ball2_column(&d);
            let b = clip_then_scale(&d);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
