//! Mild solutions `u = T_ψ(t,0)u_0 + ∫T_ψ(t,s)f ds + ∫T_ψ(t,s)g δβ_s` on a
//! periodic grid.
//!
//! All work happens mode by mode in Fourier space. The stochastic
//! convolution has two estimators sharing the same time discretisation of the
//! integrand `a(t,s) = e^{∫_s^t ψ(r,k)dr} ĝ(s,k)`: tags at the midpoints of a
//! refined copy of the solution grid. The modewise estimator samples the exact
//! Gaussian law of that discretised integral, the pathwise one forms Riemann
//! sums against sampled paths.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::gaussian::{sample_paths, uniform_times, PathSample, QSpec};
use crate::linalg::{matmul, Cholesky};
use crate::rng;
use crate::spectral::{self, Field, GridSpec, OperatorField};
use crate::symbols::SymbolSpec;
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A linear SPDE with deterministic data. `f` holds one field per solution
/// node, `g` one operator field per solution interval `(t_{i−1}, t_i]`.
#[derive(Clone, Debug)]
pub struct SPDEProblem {
    pub psi: SymbolSpec,
    pub phi: SymbolSpec,
    pub grid: GridSpec,
    pub m: usize,
    pub u0: Field,
    pub f: Vec<Field>,
    pub g: Vec<OperatorField>,
    pub kernel: CovarianceKernel,
    pub q: QSpec,
    pub t_end: f64,
    pub n_t: usize,
    pub p: f64,
    pub q_exp: f64,
    pub r_exp: f64,
}

impl SPDEProblem {
    /// Problem with zero data on a uniform grid of `n_t` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn zero(psi: SymbolSpec, phi: SymbolSpec, grid: GridSpec, m: usize, kernel: CovarianceKernel, q: QSpec, t_end: f64, n_t: usize) -> Self {
        let j = q.j();
        let r_exp = kernel.r_exp;
        SPDEProblem {
            psi,
            phi,
            u0: Field::zeros(&grid, m),
            f: vec![Field::zeros(&grid, m); n_t + 1],
            g: vec![OperatorField::zeros(&grid, m, j); n_t],
            grid,
            m,
            kernel,
            q,
            t_end,
            n_t,
            p: 2.0,
            q_exp: 2.0,
            r_exp,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        uniform_times(self.t_end, self.n_t)
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }

    pub fn j(&self) -> usize {
        self.q.j()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.q.validate()?;
        self.psi.validate()?;
        if self.n_t == 0 || !(self.t_end > 0.0) {
            return Err(Error::Invalid("need n_t >= 1 and T > 0".into()));
        }
        if self.t_end > self.kernel.t_max * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!("T = {} exceeds the kernel horizon {}", self.t_end, self.kernel.t_max)));
        }
        if self.f.len() != self.n_t + 1 || self.g.len() != self.n_t {
            return Err(Error::Shape(format!("need {} f fields and {} g fields", self.n_t + 1, self.n_t)));
        }
        let grid_ok = |g: &GridSpec| g == &self.grid;
        if !grid_ok(&self.u0.grid) || self.u0.m != self.m {
            return Err(Error::Shape("u0 does not match grid or m".into()));
        }
        if self.f.iter().any(|f| !grid_ok(&f.grid) || f.m != self.m) {
            return Err(Error::Shape("f does not match grid or m".into()));
        }
        if self.g.iter().any(|g| !grid_ok(&g.grid) || g.m != self.m || g.j != self.j()) {
            return Err(Error::Shape("g does not match grid, m or J".into()));
        }
        let lower = 2f64.max(self.r_exp);
        if !(self.p >= self.q_exp && self.q_exp >= lower) {
            return Err(Error::Hypothesis(format!(
                "exponents need p >= q >= max(2, r), got p = {}, q = {}, r = {}",
                self.p, self.q_exp, self.r_exp
            )));
        }
        Ok(())
    }

    /// `g ≡ 0`.
    pub fn is_noise_free(&self) -> bool {
        self.g.iter().all(|g| g.values.iter().all(|v| *v == ZERO))
    }

    /// Data of `self + other` on the same grid, symbols and noise.
    pub fn plus(&self, other: &SPDEProblem) -> Result<SPDEProblem> {
        let mut out = self.clone();
        out.u0 = self.u0.add(&other.u0)?;
        for (a, b) in out.f.iter_mut().zip(&other.f) {
            *a = a.add(b)?;
        }
        for (a, b) in out.g.iter_mut().zip(&other.g) {
            *a = OperatorField::from_field(a.as_field().add(&b.as_field())?, a.m, a.j)?;
        }
        Ok(out)
    }

    /// Scales every data field by `c`.
    pub fn scaled(&self, c: f64) -> SPDEProblem {
        let mut out = self.clone();
        out.u0 = self.u0.scaled(c);
        out.f.iter_mut().for_each(|f| *f = f.scaled(c));
        for g in out.g.iter_mut() {
            g.values.iter_mut().for_each(|v| *v *= c);
        }
        out
    }
}

/// Spectra of the problem data.
struct Spectra {
    u0: Field,
    f: Vec<Field>,
    /// `m·J` components, entry `(c, j)` at component `c·J + j`.
    g: Vec<Field>,
}

fn spectra(problem: &SPDEProblem) -> Result<Spectra> {
    Ok(Spectra {
        u0: spectral::forward_transform(&problem.u0)?,
        f: problem.f.iter().map(spectral::forward_transform).collect::<Result<_>>()?,
        g: problem.g.iter().map(|g| spectral::forward_transform(&g.as_field())).collect::<Result<_>>()?,
    })
}

/// `∫_s^t ψ(r, k) dr` for one mode: exact for time-independent symbols,
/// cumulative Simpson sums over a fixed node set otherwise.
struct ModeExponent {
    constant: Option<Complex64>,
    nodes: Vec<f64>,
    cumulative: Vec<Complex64>,
}

impl ModeExponent {
    fn new(psi: &SymbolSpec, xi: &[f64], nodes: &[f64], dt_quad: Option<f64>) -> Self {
        if !psi.time_dependent {
            return ModeExponent { constant: Some(psi.eval(0.0, xi)), nodes: vec![], cumulative: vec![] };
        }
        let mut cumulative = Vec::with_capacity(nodes.len());
        let mut acc = ZERO;
        let mut prev = 0.0;
        for &t in nodes {
            acc += spectral::time_integral(psi, t, prev, xi, dt_quad);
            cumulative.push(acc);
            prev = t;
        }
        ModeExponent { constant: None, nodes: nodes.to_vec(), cumulative }
    }

    fn at(&self, t: f64) -> Complex64 {
        let i = self.nodes.partition_point(|&x| x < t);
        debug_assert!(i < self.nodes.len() && self.nodes[i] == t);
        self.cumulative[i]
    }

    /// `exp(∫_s^t ψ dr)` for `s ≤ t`, both in the node set.
    fn propagator(&self, t: f64, s: f64) -> Complex64 {
        match self.constant {
            Some(psi) => (psi * (t - s)).exp(),
            None => (self.at(t) - self.at(s)).exp(),
        }
    }
}

/// Node set for exponent tables: solution nodes, fine edges and midpoints.
fn exponent_nodes(times: &[f64], fine: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = times.iter().chain(fine).copied().chain(fine.windows(2).map(|w| 0.5 * (w[0] + w[1]))).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn mode_exponents(problem: &SPDEProblem, nodes: &[f64]) -> Vec<ModeExponent> {
    (0..problem.grid.len())
        .into_par_iter()
        .map(|idx| ModeExponent::new(&problem.psi, &problem.grid.frequency(idx), nodes, problem.grid.dt_quad))
        .collect()
}

fn to_fields(grid: &GridSpec, m: usize, data: Vec<Vec<Complex64>>) -> Vec<Field> {
    data.into_iter().map(|v| Field { grid: grid.clone(), m, values: v }).collect()
}

/// Spectra of `T_ψ(t_i, 0) u_0` at every solution node.
fn homogeneous_spectra(problem: &SPDEProblem, sp: &Spectra, exps: &[ModeExponent]) -> Vec<Field> {
    let times = problem.times();
    let n = problem.grid.len();
    let data = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == 0 {
                return sp.u0.values.clone();
            }
            let mut v = sp.u0.values.clone();
            for idx in 0..n {
                let e = exps[idx].propagator(t, 0.0);
                for c in 0..problem.m {
                    v[c * n + idx] *= e;
                }
            }
            v
        })
        .collect();
    to_fields(&problem.grid, problem.m, data)
}

/// Spectra of the trapezoid approximation of `∫_0^{t_i} T_ψ(t_i, s) f(s) ds`.
fn forced_spectra(problem: &SPDEProblem, sp: &Spectra, exps: &[ModeExponent]) -> Vec<Field> {
    let times = problem.times();
    let (n, m, dt) = (problem.grid.len(), problem.m, problem.dt());
    let data = (0..times.len())
        .map(|i| {
            let mut v = vec![ZERO; m * n];
            for l in 0..=i {
                if i == 0 {
                    break;
                }
                let w = if l == 0 || l == i { 0.5 * dt } else { dt };
                let fl = &sp.f[l].values;
                for idx in 0..n {
                    let e = exps[idx].propagator(times[i], times[l]) * w;
                    for c in 0..m {
                        v[c * n + idx] += e * fl[c * n + idx];
                    }
                }
            }
            v
        })
        .collect();
    to_fields(&problem.grid, m, data)
}

/// `T_ψ(t, 0) u_0` at every solution node.
pub fn deterministic_homogeneous(problem: &SPDEProblem) -> Result<Vec<Field>> {
    problem.validate()?;
    let sp = spectra(problem)?;
    let exps = mode_exponents(problem, &exponent_nodes(&problem.times(), &[]));
    let mut out: Vec<Field> = homogeneous_spectra(problem, &sp, &exps).iter().map(spectral::inverse_transform).collect::<Result<_>>()?;
    out[0] = problem.u0.clone();
    Ok(out)
}

/// Composite-trapezoid `∫_0^t T_ψ(t, s) f(s) ds` at every solution node.
pub fn deterministic_forced(problem: &SPDEProblem) -> Result<Vec<Field>> {
    problem.validate()?;
    let sp = spectra(problem)?;
    let exps = mode_exponents(problem, &exponent_nodes(&problem.times(), &[]));
    forced_spectra(problem, &sp, &exps).iter().map(spectral::inverse_transform).collect()
}

/// Solution grid refined `refine` times.
pub fn fine_edges(problem: &SPDEProblem, refine: usize) -> Vec<f64> {
    uniform_times(problem.t_end, problem.n_t * refine.max(1))
}

/// Integrand coefficients `a(t_i, s_a)` for one mode and one `(c, j)` entry:
/// row `i` (solution node), column `a` (fine piece).
fn integrand_row(problem: &SPDEProblem, sp: &Spectra, exp: &ModeExponent, idx: usize, c: usize, jj: usize, refine: usize, fine: &[f64]) -> Vec<Complex64> {
    let times = problem.times();
    let n = problem.grid.len();
    let comp = c * problem.j() + jj;
    let np = fine.len() - 1;
    let mut out = vec![ZERO; times.len() * np];
    for a in 0..np {
        let ghat = sp.g[a / refine].values[comp * n + idx];
        if ghat == ZERO {
            continue;
        }
        let mid = 0.5 * (fine[a] + fine[a + 1]);
        // The piece (fine[a], fine[a+1]] lies inside (t_{i-1}, t_i] for i = a/refine + 1.
        for i in a / refine + 1..times.len() {
            out[i * np + a] = exp.propagator(times[i], mid) * ghat;
        }
    }
    out
}

/// Pairs `(k, −k)` with `k ≤ −k` in flat order; self-conjugate modes pair
/// with themselves.
fn mode_pairs(grid: &GridSpec) -> Vec<(usize, usize)> {
    (0..grid.len()).filter_map(|i| {
        let c = grid.conjugate_index(i);
        (i <= c).then_some((i, c))
    }).collect()
}

/// Samples (`[sample][node]`, spectral) of the stochastic convolution drawn
/// from the exact Gaussian law of the discretised integral, one conjugate
/// mode pair at a time.
pub fn stochastic_convolution_modewise(problem: &SPDEProblem, n_samples: usize, seed: u64, refine: usize) -> Result<Vec<Vec<Field>>> {
    problem.validate()?;
    let refine = refine.max(1);
    let sp = spectra(problem)?;
    let times = problem.times();
    let fine = fine_edges(problem, refine);
    let exps = mode_exponents(problem, &exponent_nodes(&times, &fine));
    let (n, m, jn, nt) = (problem.grid.len(), problem.m, problem.j(), times.len());
    let mut out = vec![vec![Field::zeros(&problem.grid, m); nt]; n_samples];
    if problem.is_noise_free() {
        return Ok(out);
    }
    let np = fine.len() - 1;
    let inc = problem.kernel.increment_gram(&fine)?;
    let pairs = mode_pairs(&problem.grid);
    // Rows: (c, node, re/im); the node-0 rows are identically zero.
    let dim = 2 * m * nt;
    let factors: Vec<Option<Cholesky>> = pairs
        .par_iter()
        .map(|&(idx, _)| {
            let mut cov = vec![0.0; dim * dim];
            for jj in 0..jn {
                let mut b = vec![0.0; dim * np];
                let mut any = false;
                for c in 0..m {
                    let a = integrand_row(problem, &sp, &exps[idx], idx, c, jj, refine, &fine);
                    for i in 0..nt {
                        for p in 0..np {
                            let v = a[i * np + p];
                            any |= v != ZERO;
                            b[((c * nt + i) * 2) * np + p] = v.re;
                            b[((c * nt + i) * 2 + 1) * np + p] = v.im;
                        }
                    }
                }
                if !any {
                    continue;
                }
                let bi = matmul(&b, &inc, dim, np, np);
                let mut bt = vec![0.0; np * dim];
                for r in 0..dim {
                    for p in 0..np {
                        bt[p * dim + r] = b[r * np + p];
                    }
                }
                for (x, y) in cov.iter_mut().zip(matmul(&bi, &bt, dim, np, dim)) {
                    *x += y;
                }
            }
            if cov.iter().all(|v| *v == 0.0) {
                Ok(None)
            } else {
                Cholesky::new(&cov, dim).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    out.par_iter_mut().enumerate().for_each(|(s, fields)| {
        let mut z = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        for (pn, (&(idx, cidx), fac)) in pairs.iter().zip(&factors).enumerate() {
            let Some(fac) = fac else { continue };
            let mut g = rng::substream(seed, rng::domain::MODEWISE, rng::pair_index(s, pn));
            rng::fill_normal(&mut g, &mut z);
            fac.mul(&z, &mut y);
            for c in 0..m {
                for (i, field) in fields.iter_mut().enumerate() {
                    let r = (c * nt + i) * 2;
                    let v = Complex64::new(y[r], y[r + 1]);
                    field.values[c * n + idx] = v;
                    if cidx != idx {
                        field.values[c * n + cidx] = v.conj();
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Samples (`[sample][node]`, spectral) of the stochastic convolution as
/// Riemann sums `Σ_a a(t, s_a) Δβ_j(a)` against sampled paths. The path grid
/// must be a uniform refinement of the solution grid.
pub fn stochastic_convolution_pathwise(problem: &SPDEProblem, paths: &PathSample) -> Result<Vec<Vec<Field>>> {
    problem.validate()?;
    let times = problem.times();
    let refine = path_refinement(problem, paths)?;
    let sp = spectra(problem)?;
    let fine = fine_edges(problem, refine);
    let exps = mode_exponents(problem, &exponent_nodes(&times, &fine));
    let (n, m, jn, nt, np) = (problem.grid.len(), problem.m, problem.j(), times.len(), fine.len() - 1);
    if problem.is_noise_free() {
        return Ok(vec![vec![Field::zeros(&problem.grid, m); nt]; paths.n_samples]);
    }
    // coeffs[(idx, c, j)] = a(t_i, s_a) rows, or None when identically zero.
    let coeffs: Vec<Option<Vec<Complex64>>> = (0..n * m * jn)
        .into_par_iter()
        .map(|key| {
            let (idx, rest) = (key / (m * jn), key % (m * jn));
            let (c, jj) = (rest / jn, rest % jn);
            let a = integrand_row(problem, &sp, &exps[idx], idx, c, jj, refine, &fine);
            a.iter().any(|v| *v != ZERO).then_some(a)
        })
        .collect();
    Ok((0..paths.n_samples)
        .into_par_iter()
        .map(|s| {
            let incs: Vec<Vec<f64>> = (0..jn).map(|jj| paths.path(s, jj).windows(2).map(|w| w[1] - w[0]).collect()).collect();
            let mut fields = vec![Field::zeros(&problem.grid, m); nt];
            for (key, a) in coeffs.iter().enumerate() {
                let Some(a) = a else { continue };
                let (idx, rest) = (key / (m * jn), key % (m * jn));
                let (c, jj) = (rest / jn, rest % jn);
                for (i, field) in fields.iter_mut().enumerate() {
                    let row = &a[i * np..(i + 1) * np];
                    let v: Complex64 = row.iter().zip(&incs[jj]).map(|(x, d)| x * d).sum();
                    field.values[c * n + idx] += v;
                }
            }
            fields
        })
        .collect())
}

fn path_refinement(problem: &SPDEProblem, paths: &PathSample) -> Result<usize> {
    let times = problem.times();
    if paths.j != problem.j() {
        return Err(Error::Shape(format!("paths have J = {}, problem has J = {}", paths.j, problem.j())));
    }
    let pieces = paths.times.len().saturating_sub(1);
    if pieces == 0 || pieces % problem.n_t != 0 || paths.times[0] != 0.0 {
        return Err(Error::Alignment("path grid is not a refinement of the solution grid".into()));
    }
    let refine = pieces / problem.n_t;
    let fine = fine_edges(problem, refine);
    let tol = 1e-12 * problem.t_end.max(1.0);
    if fine.iter().zip(&paths.times).any(|(a, b)| (a - b).abs() > tol) || times.len() != problem.n_t + 1 {
        return Err(Error::Alignment("path grid is not a uniform refinement of the solution grid".into()));
    }
    Ok(refine)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Modewise,
    Pathwise,
}

/// Samples of the mild solution, stored as spectra per sample and node.
#[derive(Clone, Debug)]
pub struct SolutionEnsemble {
    pub times: Vec<f64>,
    pub estimator: Estimator,
    pub seed: u64,
    pub refine: usize,
    pub n_samples: usize,
    pub spectra: Vec<Vec<Field>>,
    /// Paths behind a pathwise ensemble.
    pub paths: Option<PathSample>,
}

impl SolutionEnsemble {
    /// Physical field of sample `s` at node `i`.
    pub fn field(&self, s: usize, i: usize) -> Result<Field> {
        spectral::inverse_transform(&self.spectra[s][i])
    }

    /// Sample mean of the spectra at node `i`.
    pub fn mean_spectrum(&self, i: usize) -> Field {
        let mut acc = self.spectra[0][i].scaled(0.0);
        for s in &self.spectra {
            for (a, v) in acc.values.iter_mut().zip(&s[i].values) {
                *a += v;
            }
        }
        acc.scaled(1.0 / self.n_samples as f64)
    }
}

/// Homogeneous, forced and stochastic parts summed per sample.
pub fn solve(problem: &SPDEProblem, n_samples: usize, seed: u64, estimator: Estimator, refine: usize) -> Result<SolutionEnsemble> {
    problem.validate()?;
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let refine = refine.max(1);
    let sp = spectra(problem)?;
    let times = problem.times();
    let exps = mode_exponents(problem, &exponent_nodes(&times, &[]));
    let hom = homogeneous_spectra(problem, &sp, &exps);
    let forced = forced_spectra(problem, &sp, &exps);
    let det: Vec<Field> = hom.iter().zip(&forced).map(|(a, b)| a.add(b)).collect::<Result<_>>()?;
    let (mut stoch, paths) = match estimator {
        Estimator::Modewise => (stochastic_convolution_modewise(problem, n_samples, seed, refine)?, None),
        Estimator::Pathwise => {
            let p = sample_paths(&problem.kernel, &fine_edges(problem, refine), &problem.q, n_samples, seed)?;
            (stochastic_convolution_pathwise(problem, &p)?, Some(p))
        }
    };
    for sample in stoch.iter_mut() {
        for (f, d) in sample.iter_mut().zip(&det) {
            for (a, b) in f.values.iter_mut().zip(&d.values) {
                *a += b;
            }
        }
    }
    Ok(SolutionEnsemble { times, estimator, seed, refine, n_samples, spectra: stoch, paths })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub mode: Vec<i64>,
    /// `max_{sample, t, c} |r|`
    pub max_residual: f64,
    /// `max_{t, c}` of the residual of the ensemble mean.
    pub mean_residual: f64,
    pub n_samples: usize,
}

/// Residual of `û(t) = û_0 + ∫_0^t (ψ û + f̂) ds + Σ_j ∫_0^t ĝ_j dβ_j` for mode
/// `k` at every solution node, with the `ds` integral by the trapezoid rule
/// on the solution grid and the noise term evaluated on the ensemble's own
/// path increments.
pub fn mode_residual(problem: &SPDEProblem, ensemble: &SolutionEnsemble, k: &[i64]) -> Result<ResidualReport> {
    problem.validate()?;
    if k.len() != problem.grid.d {
        return Err(Error::Shape("mode has the wrong dimension".into()));
    }
    let noisy = !problem.is_noise_free();
    if noisy && ensemble.paths.is_none() {
        return Err(Error::Invalid("the noise term needs the path draws of a pathwise ensemble".into()));
    }
    let idx = problem.grid.mode_index(k);
    let xi = problem.grid.frequency(idx);
    let sp = spectra(problem)?;
    let times = problem.times();
    let (n, m, jn, dt) = (problem.grid.len(), problem.m, problem.j(), problem.dt());
    let psi: Vec<Complex64> = times.iter().map(|&t| problem.psi.eval(t, &xi)).collect();
    let residual = |u: &dyn Fn(usize, usize) -> Complex64, noise: &dyn Fn(usize, usize) -> Complex64| -> f64 {
        let mut worst = 0.0f64;
        for c in 0..m {
            let mut integral = ZERO;
            let integrand = |i: usize| psi[i] * u(i, c) + sp.f[i].values[c * n + idx];
            for i in 1..times.len() {
                integral += (integrand(i - 1) + integrand(i)) * (0.5 * dt);
                let r = u(i, c) - u(0, c) - integral - noise(i, c);
                worst = worst.max(r.norm());
            }
        }
        worst
    };
    let refine = ensemble.refine;
    let noise_of = |s: usize, i: usize, c: usize| -> Complex64 {
        let Some(paths) = &ensemble.paths else { return ZERO };
        let mut acc = ZERO;
        for jj in 0..jn {
            let path = paths.path(s, jj);
            for a in 0..i * refine {
                let gh = sp.g[a / refine].values[(c * jn + jj) * n + idx];
                acc += gh * (path[a + 1] - path[a]);
            }
        }
        acc
    };
    let mut max_residual = 0.0f64;
    for s in 0..ensemble.n_samples {
        let u = |i: usize, c: usize| ensemble.spectra[s][i].values[c * n + idx];
        let r = residual(&u, &|i, c| if noisy { noise_of(s, i, c) } else { ZERO });
        max_residual = max_residual.max(r);
    }
    let means: Vec<Field> = (0..times.len()).map(|i| ensemble.mean_spectrum(i)).collect();
    let inv = 1.0 / ensemble.n_samples as f64;
    let mean_noise = |i: usize, c: usize| -> Complex64 {
        if !noisy {
            return ZERO;
        }
        (0..ensemble.n_samples).map(|s| noise_of(s, i, c)).sum::<Complex64>() * inv
    };
    let mean_residual = residual(&|i, c| means[i].values[c * n + idx], &mean_noise);
    Ok(ResidualReport { mode: k.to_vec(), max_residual, mean_residual, n_samples: ensemble.n_samples })
}

// ==========================================================================
// Problem configuration
// ==========================================================================

/// Real initial data / forcing / noise coefficient profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `a · exp(−|x|² / (2 w²))` around the centre of the box.
    Bump { amplitude: f64, width: f64 },
    /// `a · cos(ξ_k · x)`.
    Mode { k: Vec<i64>, amplitude: f64 },
}

impl FieldSpec {
    pub fn value(&self, grid: &GridSpec, idx: usize) -> f64 {
        match self {
            FieldSpec::Zero => 0.0,
            FieldSpec::Bump { amplitude, width } => {
                let x = grid.centred_point(idx);
                amplitude * (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * width * width)).exp()
            }
            FieldSpec::Mode { k, amplitude } => {
                let xi = grid.frequency(grid.mode_index(k));
                let x = grid.point(idx);
                amplitude * xi.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().cos()
            }
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            FieldSpec::Bump { width, .. } if !(*width > 0.0) => Err(Error::Config("bump width must be positive".into())),
            FieldSpec::Mode { k, .. } if k.len() != d => Err(Error::Config(format!("mode needs {d} wavenumbers"))),
            _ => Ok(()),
        }
    }

    fn field(&self, grid: &GridSpec, m: usize) -> Field {
        let one: Vec<Complex64> = (0..grid.len()).map(|idx| Complex64::new(self.value(grid, idx), 0.0)).collect();
        Field { grid: grid.clone(), m, values: one.repeat(m) }
    }
}

fn default_zero() -> FieldSpec {
    FieldSpec::Zero
}

/// JSON description of an [`SPDEProblem`]. `u0` and `f` are copied into
/// every component; `g[c][j]` gives the entry profiles, or a single profile
/// fills the diagonal `c = j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid: GridSpec,
    pub psi: crate::symbols::SymbolConfig,
    pub phi: crate::symbols::SymbolConfig,
    pub kernel: crate::covariance::KernelConfig,
    pub lambdas: Vec<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub n_t: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "default_zero")]
    pub u0: FieldSpec,
    #[serde(default = "default_zero")]
    pub f: FieldSpec,
    #[serde(default)]
    pub g: GConfig,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "two")]
    pub q: f64,
    #[serde(default)]
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GConfig {
    Diagonal(FieldSpec),
    Matrix(Vec<Vec<FieldSpec>>),
}

impl Default for GConfig {
    fn default() -> Self {
        GConfig::Diagonal(FieldSpec::Zero)
    }
}

fn one() -> usize {
    1
}

fn two() -> f64 {
    2.0
}

impl ProblemConfig {
    pub fn build(&self) -> Result<SPDEProblem> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.grid.validate().map_err(cfg)?;
        let d = self.grid.d;
        let psi = self.psi.to_spec(d).map_err(cfg)?;
        let phi = self.phi.to_spec(d).map_err(cfg)?;
        let mut kc = self.kernel.clone();
        if kc.t_max.is_none() {
            kc.t_max = Some(self.t_end);
        }
        let kernel = kc.build().map_err(cfg)?;
        let q = QSpec::new(self.lambdas.clone()).map_err(cfg)?;
        for s in [&self.u0, &self.f] {
            s.validate(d)?;
        }
        let mut pr = SPDEProblem::zero(psi, phi, self.grid.clone(), self.m, kernel, q, self.t_end, self.n_t);
        pr.p = self.p;
        pr.q_exp = self.q;
        if let Some(r) = self.r {
            pr.r_exp = r;
        }
        pr.u0 = self.u0.field(&self.grid, self.m);
        let f = self.f.field(&self.grid, self.m);
        pr.f = vec![f; self.n_t + 1];
        let jn = pr.j();
        let entry = |c: usize, jj: usize| -> Option<&FieldSpec> {
            match &self.g {
                GConfig::Diagonal(s) => (c == jj).then_some(s),
                GConfig::Matrix(rows) => rows.get(c).and_then(|r| r.get(jj)),
            }
        };
        if let GConfig::Matrix(rows) = &self.g {
            if rows.len() != self.m || rows.iter().any(|r| r.len() != jn) {
                return Err(Error::Config(format!("g must be {} x {}", self.m, jn)));
            }
        }
        let mut g = OperatorField::zeros(&self.grid, self.m, jn);
        let n = self.grid.len();
        for c in 0..self.m {
            for jj in 0..jn {
                if let Some(s) = entry(c, jj) {
                    s.validate(d)?;
                    for idx in 0..n {
                        g.values[(c * jn + jj) * n + idx] = Complex64::new(s.value(&self.grid, idx), 0.0);
                    }
                }
            }
        }
        pr.g = vec![g; self.n_t];
        pr.validate().map_err(cfg)?;
        Ok(pr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(1, n, 2.0 * std::f64::consts::PI).unwrap()
    }

    fn heat_problem(n: usize, n_t: usize, kernel: CovarianceKernel) -> SPDEProblem {
        let g = grid(n);
        SPDEProblem::zero(SymbolSpec::neg_power(2.0, 1.0, 1), SymbolSpec::power(2.0, 1), g, 1, kernel, QSpec::new(vec![1.0]).unwrap(), 1.0, n_t)
    }

    fn mode_field(g: &GridSpec, k: i64, a: f64) -> Field {
        Field::from_real(g, 1, |_, x| a * (k as f64 * x[0]).cos())
    }

    fn spectrum_at(f: &Field, k: i64) -> Complex64 {
        spectral::forward_transform(f).unwrap().values[f.grid.mode_index(&[k])]
    }

    #[test]
    fn homogeneous_decay_and_mass() {
        let mut p = heat_problem(16, 8, CovarianceKernel::wiener(1.0));
        p.u0 = mode_field(&p.grid, 2, 1.0).add(&Field::from_real(&p.grid, 1, |_, _| 0.5)).unwrap();
        let u = deterministic_homogeneous(&p).unwrap();
        assert_eq!(u[0], p.u0);
        let a0 = spectrum_at(&p.u0, 2);
        for (i, t) in p.times().iter().enumerate() {
            let a = spectrum_at(&u[i], 2);
            assert!((a - a0 * (-4.0 * t).exp()).norm() < 1e-12);
            let mean: f64 = u[i].values.iter().map(|v| v.re).sum::<f64>() / 16.0;
            assert!((mean - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_mode_quadrature() {
        for n_t in [16, 32] {
            let mut p = heat_problem(16, n_t, CovarianceKernel::wiener(1.0));
            let f = mode_field(&p.grid, 1, 1.0).add(&Field::from_real(&p.grid, 1, |_, _| 2.0)).unwrap();
            p.f = vec![f.clone(); n_t + 1];
            let u = deterministic_forced(&p).unwrap();
            let c1 = spectrum_at(&f, 1);
            let c0 = spectrum_at(&f, 0);
            let t = 1.0;
            let exact = c1 * (1.0 - (-t as f64).exp());
            let err = (spectrum_at(&u[n_t], 1) - exact).norm();
            assert!(err < 0.2 / (n_t * n_t) as f64, "n_t = {n_t}: {err}");
            assert!((spectrum_at(&u[n_t], 0) - c0 * t).norm() < 1e-13);
        }
    }

    #[test]
    fn wiener_mode_variance_and_trivial_cases() {
        let mut p = heat_problem(8, 4, CovarianceKernel::wiener(1.0));
        let out = stochastic_convolution_modewise(&p, 3, 1, 2).unwrap();
        assert!(out.iter().flatten().all(|f| f.values.iter().all(|v| *v == ZERO)));
        p.g = vec![OperatorField::from_real(&p.grid, 1, 1, |_, _, _| 1.0); 4];
        let refine = 64;
        let out = stochastic_convolution_modewise(&p, 20_000, 2, refine).unwrap();
        let dc = (8f64).sqrt();
        let x: Vec<f64> = out.iter().map(|s| s[4].values[0].re).collect();
        let mo = stats::moments(&x);
        // Variance of the midpoint-tag discretisation is within O(Δs²) of |ĝ|²t for ψ(0) = 0.
        assert!((mo.var - dc * dc).abs() < 4.0 * mo.se_var, "{} vs {}", mo.var, dc * dc);
        let paths = sample_paths(&p.kernel, &fine_edges(&p, 1), &p.q, 5, 3).unwrap();
        let pw = stochastic_convolution_pathwise(&p, &paths).unwrap();
        for s in 0..5 {
            let db = paths.path(s, 0)[1];
            assert!((pw[s][1].values[0] - Complex64::new(dc * db, 0.0)).norm() < 1e-12);
        }
        let bad = sample_paths(&p.kernel, &[0.0, 0.3, 1.0], &p.q, 2, 1).unwrap();
        assert!(matches!(stochastic_convolution_pathwise(&p, &bad), Err(Error::Alignment(_))));
    }

    #[test]
    fn linearity_contraction_and_zero() {
        let k = CovarianceKernel::fbm(0.75, 1.0).unwrap();
        let p0 = heat_problem(16, 8, k);
        let e = solve(&p0, 4, 9, Estimator::Modewise, 2).unwrap();
        assert!(e.spectra.iter().flatten().all(|f| f.values.iter().all(|v| *v == ZERO)));
        let mut a = p0.clone();
        a.u0 = mode_field(&a.grid, 3, 1.0);
        a.g = vec![OperatorField::from_real(&a.grid, 1, 1, |_, _, x| x[0].sin()); 8];
        let mut b = p0.clone();
        b.f = vec![Field::from_real(&b.grid, 1, |_, x| (-x[0] * x[0]).exp()); 9];
        b.g = vec![OperatorField::from_real(&b.grid, 1, 1, |_, _, _| 0.3); 8];
        let ab = a.plus(&b).unwrap();
        for est in [Estimator::Modewise, Estimator::Pathwise] {
            let (ea, eb, eab) = (solve(&a, 6, 5, est, 2).unwrap(), solve(&b, 6, 5, est, 2).unwrap(), solve(&ab, 6, 5, est, 2).unwrap());
            if est == Estimator::Pathwise {
                for s in 0..6 {
                    for i in 0..9 {
                        let lhs = &eab.spectra[s][i];
                        let rhs = ea.spectra[s][i].add(&eb.spectra[s][i]).unwrap();
                        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
                    }
                }
            }
        }
        let u = deterministic_homogeneous(&a).unwrap();
        let norms: Vec<f64> = u.iter().map(|f| f.l2_discrete()).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    }

    #[test]
    fn residuals() {
        let mut p = heat_problem(16, 16, CovarianceKernel::wiener(1.0));
        p.psi = SymbolSpec::neg_power(2.0, 1.0, 1);
        p.u0 = Field::from_real(&p.grid, 1, |_, _| 1.0);
        let e = solve(&p, 1, 0, Estimator::Modewise, 1).unwrap();
        let r = mode_residual(&p, &e, &[0]).unwrap();
        assert_eq!(r.max_residual, 0.0);
        let mut last = None;
        for n_t in [16, 32] {
            let mut q = heat_problem(16, n_t, CovarianceKernel::wiener(1.0));
            q.u0 = mode_field(&q.grid, 1, 1.0);
            q.f = vec![mode_field(&q.grid, 1, 1.0); n_t + 1];
            let e = solve(&q, 1, 0, Estimator::Pathwise, 1).unwrap();
            let r = mode_residual(&q, &e, &[1]).unwrap().max_residual;
            if let Some(prev) = last {
                assert!(r <= 0.55 * prev, "{r} vs {prev}");
            }
            last = Some(r);
        }
    }

    #[test]
    fn problem_config() {
        let json = r#"{"grid":{"d":1,"n":16,"L":6.283185307179586},"psi":{"name":"neg_power","gamma":2},
            "phi":{"name":"power","gamma":2},"kernel":{"kernel":"wiener"},"lambdas":[1.0],"T":1.0,"n_t":8,
            "u0":{"type":"mode","k":[1],"amplitude":1.0},"g":{"type":"bump","amplitude":1.0,"width":0.5}}"#;
        let c: ProblemConfig = serde_json::from_str(json).unwrap();
        let p = c.build().unwrap();
        assert_eq!(p.f.len(), 9);
        assert!(!p.is_noise_free());
        assert!(serde_json::from_str::<ProblemConfig>(&json.replace("\"n_t\"", "\"nt\"")).is_err());
    }
}
