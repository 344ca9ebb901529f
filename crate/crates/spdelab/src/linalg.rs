//! Dense symmetric positive-semidefinite factorization.
//!
//! Gram matrices of covariance kernels are often rank deficient (the linear
//! kernel has rank one) or mildly ill-conditioned (fBm on fine grids). The
//! factorization below accepts numerically zero pivots and, when a pivot is
//! clearly negative, retries with diagonal jitter of 1e-14, 1e-12 and 1e-10
//! times the trace before giving up.

use crate::{Error, Result};

/// Relative size below which a pivot is treated as exactly zero.
const ZERO_PIVOT: f64 = 1e-10;
const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

/// Lower-triangular factor `L` with `A + jitter·I = L Lᵀ`, stored row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    pub n: usize,
    pub l: Vec<f64>,
    pub jitter: f64,
}

impl Cholesky {
    /// Factor a symmetric PSD matrix given row-major.
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Shape(format!("matrix of length {} is not {n}x{n}", a.len())));
        }
        let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
        if !trace.is_finite() {
            return Err(Error::KernelValidity("non-finite Gram matrix".into()));
        }
        for rel in JITTER_LADDER {
            let jitter = rel * trace;
            if let Some(l) = factor(a, n, jitter) {
                return Ok(Cholesky { n, l, jitter });
            }
        }
        Err(Error::KernelValidity(format!(
            "matrix of size {n} is not positive semidefinite after jitter {:e} of trace",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    /// `y = L z`.
    pub fn mul(&self, z: &[f64], y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i + 1];
            y[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }
}

fn factor(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let ajj = a[j * n + j] + jitter;
        let mut d = ajj;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        let tol = ZERO_PIVOT * ajj.abs().max(f64::MIN_POSITIVE);
        if d > tol {
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        } else if d >= -tol {
            // Numerically singular direction: the column stays zero, but the
            // remaining entries of this column in A must then vanish too.
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                let scale = (a[i * n + i].abs() * ajj.abs()).sqrt().max(f64::MIN_POSITIVE);
                if s.abs() > 1e-6 * scale {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Row-major product `A B` of an `r×k` and a `k×c` matrix.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}
