use crate::error::{dim_err, Error, Result};
use crate::sparse::CsrMatrix;

/// Cyclic Kaczmarz sweeps over the rows of `A`, followed by clamping to the
/// nonnegative orthant after each sweep.
#[derive(Debug, Clone)]
pub struct Kaczmarz<'a> {
    a: &'a CsrMatrix,
    b: &'a [f64],
    norms: Vec<f64>,
    relax: f64,
}

impl<'a> Kaczmarz<'a> {
    pub fn new(a: &'a CsrMatrix, b: &'a [f64], relax: f64) -> Result<Self> {
        if !(relax > 0.0 && relax < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must lie in (0, 2), got {relax}"
            )));
        }
        if b.len() != a.rows() {
            return dim_err(format!(
                "sinogram has {} entries, system matrix has {} rows",
                b.len(),
                a.rows()
            ));
        }
        Ok(Self {
            a,
            b,
            norms: a.row_norms_sq(),
            relax,
        })
    }

    /// One pass over all rows, then `x <- max(0, x)`.
    pub fn sweep(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.a.cols() {
            return dim_err(format!(
                "iterate has {} entries, system matrix has {} columns",
                x.len(),
                self.a.cols()
            ));
        }
        for (i, &nrm) in self.norms.iter().enumerate() {
            if nrm == 0.0 {
                continue;
            }
            let (cols, vals) = self.a.row(i);
            let dot: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
            let step = self.relax * (self.b[i] - dot) / nrm;
            for (&j, &v) in cols.iter().zip(vals) {
                x[j] += step * v;
            }
        }
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        Ok(())
    }
}

/// Nonnegative ART: `sweeps` Kaczmarz passes from `x0`.
pub fn solve_art(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    sweeps: usize,
    relax: f64,
) -> Result<Vec<f64>> {
    let art = Kaczmarz::new(a, b, relax)?;
    if x0.len() != a.cols() {
        return dim_err("starting point does not match the system matrix");
    }
    let mut x = x0.to_vec();
    for _ in 0..sweeps {
        art.sweep(&mut x)?;
    }
    Ok(x)
}
