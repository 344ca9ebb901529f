//! Q-Gaussian processes truncated to `J` modes, step functions in `ℋ_{U_0}`
//! and Wiener integrals.
//!
//! U_0 coordinates are stored in the orthonormal basis `{√λ_j e_j}`. With
//! `β = Σ √λ_j β_j e_j` the Wiener integral of a step function with
//! coordinates `c_{a,j}` on piece `a` is `Σ_a Σ_j c_{a,j} Δ_a β_j`, so the
//! eigenvalues never appear in downstream formulas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::linalg::Cholesky;
use crate::rng;
use crate::{Error, Result};

/// Eigenvalues `λ_1 ≥ … ≥ λ_J > 0` of `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSpec {
    pub lambdas: Vec<f64>,
}

impl QSpec {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        let q = QSpec { lambdas };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::Invalid("QSpec needs at least one eigenvalue".into()));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Invalid("eigenvalues must be positive and finite".into()));
        }
        if self.lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invalid("eigenvalues must be non-increasing".into()));
        }
        Ok(())
    }

    pub fn j(&self) -> usize {
        self.lambdas.len()
    }
}

/// `φ(t) = Σ_a 1_{(t_{a-1}, t_a]}(t) φ_a` with `φ_a` in U_0 coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    /// One row of `J` coordinates per piece.
    pub coeffs: Vec<Vec<f64>>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let s = StepFunction { breakpoints, coeffs };
        s.validate()?;
        Ok(s)
    }

    /// `1_{(a,b]} ⊗ v`.
    pub fn indicator(a: f64, b: f64, v: Vec<f64>) -> Result<Self> {
        Self::new(vec![a, b], vec![v])
    }

    /// Step function given by U-coordinates `u_{a,j}` paired through the U
    /// inner product: `⟨u, β_t⟩_U = Σ_j √λ_j u_j β_j(t)`, i.e. U_0
    /// coordinates `√λ_j u_j`.
    pub fn from_u_pairing(breakpoints: Vec<f64>, u_rows: &[Vec<f64>], q: &QSpec) -> Result<Self> {
        let coeffs = u_rows.iter().map(|row| row.iter().zip(&q.lambdas).map(|(u, l)| u * l.sqrt()).collect()).collect();
        Self::new(breakpoints, coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.len() != self.coeffs.len() + 1 || self.coeffs.is_empty() {
            return Err(Error::Shape(format!(
                "{} breakpoints do not bound {} pieces",
                self.breakpoints.len(),
                self.coeffs.len()
            )));
        }
        if self.breakpoints[0] < 0.0 || self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Ordering("breakpoints must satisfy 0 <= t_0 < ... < t_M".into()));
        }
        let j = self.coeffs[0].len();
        if self.coeffs.iter().any(|c| c.len() != j || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Shape("coefficient rows must be finite with equal length".into()));
        }
        Ok(())
    }

    pub fn j(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &[f64])> {
        self.breakpoints.windows(2).zip(&self.coeffs).map(|(w, c)| (w[0], w[1], c.as_slice()))
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().expect("validated")
    }

    pub fn scaled(&self, a: f64) -> StepFunction {
        StepFunction { breakpoints: self.breakpoints.clone(), coeffs: self.coeffs.iter().map(|r| r.iter().map(|v| a * v).collect()).collect() }
    }

    /// U_0 coordinates on `(t − , t]`, zero outside the support.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        for (a, b, c) in self.pieces() {
            if t > a && t <= b {
                return c.to_vec();
            }
        }
        vec![0.0; self.j()]
    }

    /// `‖φ‖_{L^r([0,T]; U_0)}`.
    pub fn lr_norm(&self, r: f64) -> f64 {
        let norms = self.pieces().map(|(a, b, c)| (b - a, dot(c, c).sqrt()));
        if r.is_infinite() {
            return norms.fold(0.0, |m, (_, n)| m.max(n));
        }
        norms.map(|(len, n)| len * n.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_j(a: &StepFunction, b: &StepFunction) -> Result<()> {
    if a.j() != b.j() {
        return Err(Error::Shape(format!("U_0 dimensions differ: {} vs {}", a.j(), b.j())));
    }
    Ok(())
}

/// `⟨φ, ψ⟩_{ℋ_{U_0}} = Σ_{a,b} ⟨φ_a, ψ_b⟩_{U_0} ⟨1_a, 1_b⟩_ℋ`.
pub fn inner_h_u0(phi: &StepFunction, psi: &StepFunction, kernel: &CovarianceKernel) -> Result<f64> {
    check_j(phi, psi)?;
    let mut s = 0.0;
    for (a0, a1, ca) in phi.pieces() {
        for (b0, b1, cb) in psi.pieces() {
            let d = dot(ca, cb);
            if d != 0.0 {
                s += d * kernel.rectangle_increment((a0, a1), (b0, b1))?;
            }
        }
    }
    Ok(s)
}

/// `‖φ‖_{|ℋ_{U_0}|}`: the rectangle-increment sum on the piece norms
/// `‖φ_a‖_{U_0}` with absolute increments.
pub fn abs_norm_h_u0(phi: &StepFunction, kernel: &CovarianceKernel) -> Result<f64> {
    let mut s = 0.0;
    for (a0, a1, ca) in phi.pieces() {
        for (b0, b1, cb) in phi.pieces() {
            s += dot(ca, ca).sqrt() * dot(cb, cb).sqrt() * kernel.rectangle_increment((a0, a1), (b0, b1))?.abs();
        }
    }
    Ok(s.sqrt())
}

/// Two-parameter step function `Φ(s, t) = Σ 1_a(s) 1_b(t) v_{ab}` with values
/// in a `dim`-dimensional space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorStep {
    pub breaks_s: Vec<f64>,
    pub breaks_t: Vec<f64>,
    pub dim: usize,
    /// `values[(a·M_t + b)·dim + k]`.
    pub values: Vec<f64>,
}

impl TensorStep {
    /// `f ⊗ g ⊗ v` for scalar step functions (`J = 1`) `f`, `g`.
    pub fn outer(f: &StepFunction, g: &StepFunction, v: &[f64]) -> Result<Self> {
        if f.j() != 1 || g.j() != 1 {
            return Err(Error::Shape("outer products take scalar step functions".into()));
        }
        let mut values = Vec::with_capacity(f.coeffs.len() * g.coeffs.len() * v.len());
        for a in &f.coeffs {
            for b in &g.coeffs {
                values.extend(v.iter().map(|x| a[0] * b[0] * x));
            }
        }
        Ok(TensorStep { breaks_s: f.breakpoints.clone(), breaks_t: g.breakpoints.clone(), dim: v.len(), values })
    }

    fn cells(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64), &[f64])> {
        let nt = self.breaks_t.len() - 1;
        self.values.chunks(self.dim).enumerate().map(move |(i, v)| {
            let (a, b) = (i / nt, i % nt);
            ((self.breaks_s[a], self.breaks_s[a + 1]), (self.breaks_t[b], self.breaks_t[b + 1]), v)
        })
    }
}

/// `⟨Φ, Ψ⟩_{ℋ⊗ℋ}`: double rectangle-increment sum over both time axes.
pub fn tensor_inner(phi: &TensorStep, psi: &TensorStep, kernel: &CovarianceKernel) -> Result<f64> {
    if phi.dim != psi.dim {
        return Err(Error::Shape("tensor value dimensions differ".into()));
    }
    let mut s = 0.0;
    for (sa, ta, va) in phi.cells() {
        for (sb, tb, vb) in psi.cells() {
            let d = dot(va, vb);
            if d != 0.0 {
                s += d * kernel.rectangle_increment(sa, sb)? * kernel.rectangle_increment(ta, tb)?;
            }
        }
    }
    Ok(s)
}

/// `‖Φ‖_{|ℋ|⊗|ℋ|}`.
pub fn tensor_abs_norm(phi: &TensorStep, kernel: &CovarianceKernel) -> Result<f64> {
    let mut s = 0.0;
    for (sa, ta, va) in phi.cells() {
        for (sb, tb, vb) in phi.cells() {
            s += dot(va, va).sqrt() * dot(vb, vb).sqrt() * (kernel.rectangle_increment(sa, sb)? * kernel.rectangle_increment(ta, tb)?).abs();
        }
    }
    Ok(s.sqrt())
}

/// Exact samples of `β(h) ~ N(0, ⟨h,h⟩_{ℋ_{U_0}})`.
pub fn wiener_integral_exact(h: &StepFunction, kernel: &CovarianceKernel, q: &QSpec, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if h.j() != q.j() {
        return Err(Error::Shape(format!("step function has J = {}, QSpec has J = {}", h.j(), q.j())));
    }
    let var = inner_h_u0(h, h, kernel)?;
    if var < -1e-12 {
        return Err(Error::KernelValidity(format!("negative variance {var:e}")));
    }
    let sd = var.max(0.0).sqrt();
    Ok((0..n_samples)
        .into_par_iter()
        .map(|i| sd * rng::normal(&mut rng::substream(seed, rng::domain::WIENER_EXACT, i as u64)))
        .collect())
}

/// Monte-Carlo paths `β_j(t_i)` for every sample and mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub n_samples: usize,
    pub j: usize,
    /// `paths[(sample·J + j)·n_times + i]`.
    pub paths: Vec<f64>,
    pub seed: u64,
}

impl PathSample {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn path(&self, sample: usize, j: usize) -> &[f64] {
        let n = self.times.len();
        let o = (sample * self.j + j) * n;
        &self.paths[o..o + n]
    }

    /// Index of the grid node equal to `t` (relative tolerance 1e-12).
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.times.last().copied().unwrap_or(1.0).abs().max(1.0);
        let i = self.times.partition_point(|&x| x < t - tol);
        if i < self.times.len() && (self.times[i] - t).abs() <= tol {
            Ok(i)
        } else {
            Err(Error::Alignment(format!("time {t} is not a path grid node")))
        }
    }

    /// `β_j(t)` with the convention `β_j(0) = 0` even when 0 is not a node.
    pub fn value_at(&self, sample: usize, j: usize, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        Ok(self.path(sample, j)[self.node_index(t)?])
    }

    /// Header (`SPDEPTH\0`, version, n_samples, J, n_times, seed) followed by
    /// the times and the paths as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * (self.times.len() + self.paths.len()));
        out.extend_from_slice(b"SPDEPTH\0");
        out.extend_from_slice(&1u32.to_le_bytes());
        for v in [self.n_samples as u64, self.j as u64, self.times.len() as u64, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.times.iter().chain(&self.paths) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Shape("malformed path file".into());
        if bytes.len() < 44 || &bytes[..8] != b"SPDEPTH\0" {
            return Err(bad());
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (n_samples, j, n_times, seed) = (u64_at(12) as usize, u64_at(20) as usize, u64_at(28) as usize, u64_at(36));
        let total = n_times + n_samples * j * n_times;
        if bytes.len() != 44 + 8 * total {
            return Err(bad());
        }
        let vals: Vec<f64> = bytes[44..].chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(PathSample { times: vals[..n_times].to_vec(), n_samples, j, paths: vals[n_times..].to_vec(), seed })
    }
}

/// Draw `n_samples` independent copies of `(β_1, …, β_J)` on `times` as
/// `L z` with `L` the Cholesky factor of `[R(t_i, t_k)]`. A leading time 0
/// is kept as a node with value exactly 0.
pub fn sample_paths(kernel: &CovarianceKernel, times: &[f64], q: &QSpec, n_samples: usize, seed: u64) -> Result<PathSample> {
    q.validate()?;
    if times.is_empty() {
        return Err(Error::Invalid("empty time grid".into()));
    }
    let skip = usize::from(times[0] == 0.0);
    let positive = &times[skip..];
    let gram = kernel.gram_matrix(positive)?;
    let chol = Cholesky::new(&gram, positive.len())?;
    let (nt, j) = (times.len(), q.j());
    let per_sample: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut out = vec![0.0; j * nt];
            let mut z = vec![0.0; positive.len()];
            for jj in 0..j {
                let mut g = rng::substream(seed, rng::domain::PATHS, rng::pair_index(s, jj));
                rng::fill_normal(&mut g, &mut z);
                chol.mul(&z, &mut out[jj * nt + skip..(jj + 1) * nt]);
            }
            out
        })
        .collect();
    Ok(PathSample { times: times.to_vec(), n_samples, j, paths: per_sample.concat(), seed })
}

/// `Σ_a Σ_j c_{a,j} (β_j(t_a) − β_j(t_{a−1}))` per sample.
pub fn wiener_integral_path(h: &StepFunction, paths: &PathSample) -> Result<Vec<f64>> {
    if h.j() != paths.j {
        return Err(Error::Shape(format!("step function has J = {}, paths have J = {}", h.j(), paths.j)));
    }
    // Resolve node indices once; `None` stands for time 0 off the grid.
    let idx = |t: f64| -> Result<Option<usize>> {
        match paths.node_index(t) {
            Ok(i) => Ok(Some(i)),
            Err(_) if t == 0.0 => Ok(None),
            Err(e) => Err(e),
        }
    };
    let nodes: Vec<Option<usize>> = h.breakpoints.iter().map(|&t| idx(t)).collect::<Result<_>>()?;
    Ok((0..paths.n_samples)
        .into_par_iter()
        .map(|s| {
            let mut acc = 0.0;
            for (a, c) in h.coeffs.iter().enumerate() {
                for (jj, cj) in c.iter().enumerate() {
                    let p = paths.path(s, jj);
                    let v = |n: Option<usize>| n.map_or(0.0, |i| p[i]);
                    acc += cj * (v(nodes[a + 1]) - v(nodes[a]));
                }
            }
            acc
        })
        .collect())
}

/// Uniform grid `0, T/n, …, T`.
pub fn uniform_times(t_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn fbm() -> CovarianceKernel {
        CovarianceKernel::fbm(0.75, 2.0).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let e1 = StepFunction::indicator(0.0, 1.0, vec![1.0, 0.0]).unwrap();
        let e2 = StepFunction::indicator(0.0, 1.0, vec![0.0, 1.0]).unwrap();
        let later = StepFunction::indicator(1.0, 2.0, vec![1.0, 0.0]).unwrap();
        assert!((inner_h_u0(&e1, &e1, &fbm()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(inner_h_u0(&e1, &e2, &fbm()).unwrap(), 0.0);
        assert!((inner_h_u0(&e1, &later, &fbm()).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn tensor_examples() {
        let w = CovarianceKernel::wiener(2.0);
        let a = StepFunction::indicator(0.0, 1.0, vec![1.0]).unwrap();
        let b = StepFunction::indicator(1.0, 2.0, vec![1.0]).unwrap();
        let v = [0.6, 0.8, 2.0];
        let aa = TensorStep::outer(&a, &a, &v).unwrap();
        assert!((tensor_inner(&aa, &aa, &w).unwrap() - dot(&v, &v)).abs() < 1e-15);
        let ba = TensorStep::outer(&b, &a, &v).unwrap();
        assert_eq!(tensor_inner(&aa, &ba, &w).unwrap(), 0.0);
        let unit = [1.0];
        let ab = TensorStep::outer(&a, &b, &unit).unwrap();
        let aa1 = TensorStep::outer(&a, &a, &unit).unwrap();
        assert!((tensor_inner(&ab, &ab, &fbm()).unwrap() - 1.0).abs() < 1e-14);
        assert!((tensor_inner(&aa1, &ab, &fbm()).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn exact_integral_examples() {
        let q = QSpec::new(vec![1.0, 0.5]).unwrap();
        let zero = StepFunction::indicator(0.0, 1.0, vec![0.0, 0.0]).unwrap();
        assert!(wiener_integral_exact(&zero, &fbm(), &q, 100, 1).unwrap().iter().all(|v| *v == 0.0));
        let w = CovarianceKernel::wiener(2.0);
        let h = StepFunction::new(vec![0.0, 1.0, 2.0], vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(inner_h_u0(&h, &h, &w).unwrap(), 2.0);
        let x = wiener_integral_exact(&h, &w, &q, 40_000, 5).unwrap();
        let m = stats::moments(&x);
        assert!((m.var - 2.0).abs() < 4.0 * m.se_var);
    }

    #[test]
    fn linear_paths_are_lines() {
        let q = QSpec::new(vec![1.0]).unwrap();
        let times = uniform_times(1.0, 16);
        let p = sample_paths(&CovarianceKernel::linear(1.0), &times, &q, 50, 3).unwrap();
        for s in 0..50 {
            let path = p.path(s, 0);
            assert_eq!(path[0], 0.0);
            let slope = path[16];
            for i in 1..=16 {
                assert!((path[i] / times[i] - slope).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fbm_path_variance() {
        let q = QSpec::new(vec![1.0]).unwrap();
        let times = uniform_times(1.0, 8);
        let p = sample_paths(&CovarianceKernel::fbm(0.75, 1.0).unwrap(), &times, &q, 20_000, 9).unwrap();
        for i in [2, 5, 8] {
            let x: Vec<f64> = (0..p.n_samples).map(|s| p.path(s, 0)[i]).collect();
            let m = stats::moments(&x);
            assert!((m.var - times[i].powf(1.5)).abs() < 4.0 * m.se_var, "t = {}", times[i]);
        }
    }

    #[test]
    fn alignment_and_bytes() {
        let q = QSpec::new(vec![1.0, 0.25]).unwrap();
        let p = sample_paths(&CovarianceKernel::wiener(1.0), &uniform_times(1.0, 4), &q, 3, 2).unwrap();
        let bad = StepFunction::indicator(0.0, 0.3, vec![1.0, 0.0]).unwrap();
        assert!(matches!(wiener_integral_path(&bad, &p), Err(Error::Alignment(_))));
        assert_eq!(PathSample::from_bytes(&p.to_bytes()).unwrap(), p);
        let again = sample_paths(&CovarianceKernel::wiener(1.0), &uniform_times(1.0, 4), &q, 3, 2).unwrap();
        assert_eq!(again.to_bytes(), p.to_bytes());
    }

    #[test]
    fn lambda_scaling() {
        let times = uniform_times(1.0, 4);
        let rows = vec![vec![1.0, -2.0]];
        let q = QSpec::new(vec![1.0, 0.5]).unwrap();
        let q4 = QSpec::new(vec![4.0, 2.0]).unwrap();
        let k = CovarianceKernel::wiener(1.0);
        let p = sample_paths(&k, &times, &q, 10, 1).unwrap();
        let p4 = sample_paths(&k, &times, &q4, 10, 1).unwrap();
        // Fixed U_0 coordinates: λ does not enter.
        let h = StepFunction::new(vec![0.0, 0.5], rows.clone()).unwrap();
        assert_eq!(wiener_integral_path(&h, &p).unwrap(), wiener_integral_path(&h, &p4).unwrap());
        // Fixed U coordinates paired in U: outputs scale by √c.
        let a = wiener_integral_path(&StepFunction::from_u_pairing(vec![0.0, 0.5], &rows, &q).unwrap(), &p).unwrap();
        let b = wiener_integral_path(&StepFunction::from_u_pairing(vec![0.0, 0.5], &rows, &q4).unwrap(), &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 2.0 * x).abs() < 1e-14);
        }
    }
}
