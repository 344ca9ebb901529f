//! Cylinder functionals, Malliavin derivatives and Skorohod integrals of
//! elementary processes.
//!
//! Every Gaussian quantity in a draw (the `β(h_l)` feeding the coefficients
//! and the `β(φ_i)` in the Skorohod formula) is a linear functional of one
//! set of increments on the union partition of all step functions involved,
//! so all correlations are exact.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::gaussian::{dot, inner_h_u0, QSpec, StepFunction};
use crate::linalg::Cholesky;
use crate::rng;
use crate::stats;
use crate::{Error, Result};

/// One-variable shape `g`; a cylinder functional is `Π_l g(β(h_l))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `Σ_k c_k x^k`
    Polynomial { coeffs: Vec<f64> },
    /// `e^{-x²}`
    ExpNegSquare,
    /// `sin x`
    Sine,
}

impl Shape {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Shape::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Shape::ExpNegSquare => (-x * x).exp(),
            Shape::Sine => x.sin(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Shape::Polynomial { coeffs } => coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
            Shape::ExpNegSquare => -2.0 * x * (-x * x).exp(),
            Shape::Sine => x.cos(),
        }
    }
}

/// `F = Π_l g(β(h_l))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderFunctional {
    pub shape: Shape,
    pub directions: Vec<StepFunction>,
}

impl CylinderFunctional {
    pub fn new(shape: Shape, directions: Vec<StepFunction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Invalid("a cylinder functional needs at least one direction".into()));
        }
        Ok(CylinderFunctional { shape, directions })
    }

    /// `F = β(h)`.
    pub fn linear(h: StepFunction) -> Self {
        CylinderFunctional { shape: Shape::Polynomial { coeffs: vec![0.0, 1.0] }, directions: vec![h] }
    }

    /// `F ≡ c` (a constant polynomial of `β(h)`).
    pub fn constant(c: f64, h: StepFunction) -> Self {
        CylinderFunctional { shape: Shape::Polynomial { coeffs: vec![c] }, directions: vec![h] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.shape.value(v)).product()
    }

    /// `∂_l f(x)` for every direction.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|l| x.iter().enumerate().map(|(m, &v)| if m == l { self.shape.derivative(v) } else { self.shape.value(v) }).product())
            .collect()
    }
}

/// `D^β F = Σ_l ∂_l f(β(h_1), …, β(h_n)) h_l` at one draw `x = (β(h_l))_l`.
pub fn malliavin_derivative<'a>(f: &'a CylinderFunctional, x: &[f64]) -> Vec<(f64, &'a StepFunction)> {
    f.gradient(x).into_iter().zip(&f.directions).collect()
}

/// `D_φ F = Σ_l ∂_l f(x) ⟨h_l, φ⟩_{ℋ_{U_0}}` at one draw.
pub fn d_phi(f: &CylinderFunctional, phi: &StepFunction, kernel: &CovarianceKernel, x: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (g, h) in malliavin_derivative(f, x) {
        if g != 0.0 {
            s += g * inner_h_u0(h, phi, kernel)?;
        }
    }
    Ok(s)
}

/// One term `F_i k_i ⊗ φ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub f: CylinderFunctional,
    pub k: Vec<f64>,
    pub phi: StepFunction,
}

/// `u = Σ_i F_i k_i ⊗ φ_i`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ElementaryProcess {
    pub terms: Vec<Term>,
}

impl ElementaryProcess {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let u = ElementaryProcess { terms };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.terms.first() else {
            return Ok(());
        };
        let (m, j) = (first.k.len(), first.phi.j());
        for t in &self.terms {
            if t.k.len() != m || t.phi.j() != j || t.f.directions.iter().any(|h| h.j() != j) {
                return Err(Error::Shape("terms disagree on K or U_0 dimension".into()));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.terms.first().map_or(0, |t| t.k.len())
    }

    pub fn j(&self) -> usize {
        self.terms.first().map_or(0, |t| t.phi.j())
    }

    pub fn is_deterministic(&self) -> bool {
        self.terms.iter().all(|t| matches!(&t.f.shape, Shape::Polynomial { coeffs } if coeffs.len() <= 1))
    }

    /// Concatenation of the term lists (the sum `u + v`).
    pub fn plus(&self, other: &ElementaryProcess) -> ElementaryProcess {
        ElementaryProcess { terms: self.terms.iter().chain(&other.terms).cloned().collect() }
    }

    /// Every step function the process refers to.
    pub fn directions(&self) -> Vec<StepFunction> {
        let mut out: Vec<StepFunction> = Vec::new();
        for t in &self.terms {
            for h in t.f.directions.iter().chain(std::iter::once(&t.phi)) {
                if !out.contains(h) {
                    out.push(h.clone());
                }
            }
        }
        out
    }

    pub fn end(&self) -> f64 {
        self.directions().iter().map(|h| h.end()).fold(0.0, f64::max)
    }
}

/// Elementary process as written in JSON: named step functions and terms
/// referring to them by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub steps: BTreeMap<String, StepFunction>,
    pub terms: Vec<TermConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub shape: Shape,
    pub directions: Vec<String>,
    pub k: Vec<f64>,
    pub phi: String,
}

impl ProcessConfig {
    pub fn build(&self) -> Result<ElementaryProcess> {
        let get = |name: &String| {
            let s = self.steps.get(name).ok_or_else(|| Error::Config(format!("unknown step function '{name}'")))?;
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok::<_, Error>(s.clone())
        };
        let mut terms = Vec::new();
        for t in &self.terms {
            let dirs = t.directions.iter().map(get).collect::<Result<Vec<_>>>()?;
            let f = CylinderFunctional::new(t.shape.clone(), dirs).map_err(|e| Error::Config(e.to_string()))?;
            terms.push(Term { f, k: t.k.clone(), phi: get(&t.phi)? });
        }
        ElementaryProcess::new(terms).map_err(|e| Error::Config(e.to_string()))
    }
}

// ==========================================================================
// Joint Gaussian draws
// ==========================================================================

/// A set of step functions sharing one refined partition. Draws produce the
/// increments `Δ_a β_j` on the partition pieces and, from them, `β(h)` for
/// every direction.
#[derive(Clone, Debug)]
pub struct Universe {
    pub directions: Vec<StepFunction>,
    pub edges: Vec<f64>,
    pub j: usize,
    /// Per direction: `pieces × J` coordinates on the partition.
    coords: Vec<Vec<f64>>,
    /// Increment Gram `⟨1_a, 1_b⟩_ℋ` of the partition pieces.
    pub increments: Vec<f64>,
    factor: Cholesky,
    /// Exact `⟨h_a, h_b⟩_{ℋ_{U_0}}` between directions.
    pub gram: Vec<f64>,
}

impl Universe {
    /// Partition = all breakpoints of `directions` together with `extra_edges`.
    pub fn new(directions: Vec<StepFunction>, kernel: &CovarianceKernel, extra_edges: &[f64]) -> Result<Self> {
        let j = directions.first().map_or(1, |h| h.j());
        let mut edges: Vec<f64> = directions.iter().flat_map(|h| h.breakpoints.iter().copied()).chain(extra_edges.iter().copied()).collect();
        edges.push(0.0);
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        let pieces = edges.len() - 1;
        let coords = directions
            .iter()
            .map(|h| {
                let mut c = Vec::with_capacity(pieces * j);
                for w in edges.windows(2) {
                    c.extend(h.value_at(0.5 * (w[0] + w[1])));
                }
                c
            })
            .collect();
        let increments = kernel.increment_gram(&edges)?;
        let factor = Cholesky::new(&increments, pieces)?;
        let nd = directions.len();
        let mut gram = vec![0.0; nd * nd];
        for a in 0..nd {
            for b in 0..nd {
                gram[a * nd + b] = inner_h_u0(&directions[a], &directions[b], kernel)?;
            }
        }
        Ok(Universe { directions, edges, j, coords, increments, factor, gram })
    }

    pub fn pieces(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn index_of(&self, h: &StepFunction) -> Option<usize> {
        self.directions.iter().position(|d| d == h)
    }

    pub fn coords(&self, dir: usize) -> &[f64] {
        &self.coords[dir]
    }

    /// Increments `Δ_a β_j` (flat `a·J + j`) for draw `sample`.
    pub fn draw_increments(&self, seed: u64, domain: u64, sample: usize) -> Vec<f64> {
        let p = self.pieces();
        let mut z = vec![0.0; p];
        let mut col = vec![0.0; p];
        let mut out = vec![0.0; p * self.j];
        for jj in 0..self.j {
            let mut g = rng::substream(seed, domain, rng::pair_index(sample, jj));
            rng::fill_normal(&mut g, &mut z);
            self.factor.mul(&z, &mut col);
            for a in 0..p {
                out[a * self.j + jj] = col[a];
            }
        }
        out
    }

    /// `β(h_d)` for every direction from a set of increments.
    pub fn values(&self, increments: &[f64]) -> Vec<f64> {
        self.coords.iter().map(|c| dot(c, increments)).collect()
    }
}

/// A process bound to a universe: direction indices of every term.
#[derive(Clone, Debug)]
pub struct Bound<'a> {
    pub u: &'a ElementaryProcess,
    pub universe: &'a Universe,
    f_idx: Vec<Vec<usize>>,
    phi_idx: Vec<usize>,
}

/// Per-draw quantities of a bound process.
#[derive(Clone, Debug)]
pub struct DrawValues {
    pub f: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
    pub beta_phi: Vec<f64>,
    /// `dphi[i][j] = D_{φ_j} F_i`.
    pub dphi: Vec<Vec<f64>>,
}

impl<'a> Bound<'a> {
    pub fn new(u: &'a ElementaryProcess, universe: &'a Universe) -> Result<Self> {
        let find = |h: &StepFunction| universe.index_of(h).ok_or_else(|| Error::Invalid("direction missing from universe".into()));
        let f_idx = u.terms.iter().map(|t| t.f.directions.iter().map(find).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        let phi_idx = u.terms.iter().map(|t| find(&t.phi)).collect::<Result<_>>()?;
        Ok(Bound { u, universe, f_idx, phi_idx })
    }

    pub fn evaluate(&self, beta: &[f64]) -> DrawValues {
        let nd = self.universe.directions.len();
        let g = &self.universe.gram;
        let n = self.u.terms.len();
        let mut f = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        for (t, idx) in self.u.terms.iter().zip(&self.f_idx) {
            let x: Vec<f64> = idx.iter().map(|&d| beta[d]).collect();
            f.push(t.f.eval(&x));
            grad.push(t.f.gradient(&x));
        }
        let beta_phi = self.phi_idx.iter().map(|&d| beta[d]).collect();
        let dphi = (0..n)
            .map(|i| {
                (0..n)
                    .map(|jt| self.f_idx[i].iter().zip(&grad[i]).map(|(&l, gl)| gl * g[l * nd + self.phi_idx[jt]]).sum())
                    .collect()
            })
            .collect();
        DrawValues { f, grad, beta_phi, dphi }
    }

    /// `δ(u) = Σ_i (β(φ_i) F_i − D_{φ_i} F_i) k_i`, accumulated term by term.
    pub fn skorohod(&self, v: &DrawValues) -> Vec<f64> {
        let mut out = vec![0.0; self.u.m()];
        for (i, t) in self.u.terms.iter().enumerate() {
            let c = v.beta_phi[i] * v.f[i] - v.dphi[i][i];
            for (o, k) in out.iter_mut().zip(&t.k) {
                *o += c * k;
            }
        }
        out
    }

    /// `‖u‖²_{K⊗ℋ_{U_0}} + ⟨D u, S(D u)⟩` at one draw.
    pub fn isometry_rhs(&self, v: &DrawValues) -> f64 {
        let nd = self.universe.directions.len();
        let g = &self.universe.gram;
        let terms = &self.u.terms;
        let mut s = 0.0;
        for i in 0..terms.len() {
            for jt in 0..terms.len() {
                let kk = dot(&terms[i].k, &terms[jt].k);
                if kk == 0.0 {
                    continue;
                }
                let pp = g[self.phi_idx[i] * nd + self.phi_idx[jt]];
                s += kk * (pp * v.f[i] * v.f[jt] + v.dphi[i][jt] * v.dphi[jt][i]);
            }
        }
        s
    }
}

/// Universe spanning all directions of `u`.
pub fn universe_for(u: &ElementaryProcess, kernel: &CovarianceKernel, extra_edges: &[f64]) -> Result<Universe> {
    Universe::new(u.directions(), kernel, extra_edges)
}

/// Samples of `δ^β(u) ∈ ℝ^m`.
pub fn skorohod_elementary(u: &ElementaryProcess, kernel: &CovarianceKernel, q: &QSpec, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let uni = universe_for(u, kernel, &[])?;
    skorohod_in(u, &uni, q, n_samples, seed)
}

/// Samples of `δ^β(u)` using draws of a given universe (which must contain
/// every direction of `u`). Processes evaluated in one universe with one seed
/// share their Gaussian draws.
pub fn skorohod_in(u: &ElementaryProcess, uni: &Universe, q: &QSpec, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    u.validate()?;
    if u.terms.is_empty() {
        return Ok(vec![vec![]; n_samples]);
    }
    if u.j() != q.j() {
        return Err(Error::Shape(format!("process has J = {}, QSpec has J = {}", u.j(), q.j())));
    }
    let b = Bound::new(u, uni)?;
    Ok((0..n_samples)
        .into_par_iter()
        .map(|s| {
            let beta = uni.values(&uni.draw_increments(seed, rng::domain::SKOROHOD, s));
            b.skorohod(&b.evaluate(&beta))
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkorohodReport {
    pub name: String,
    pub kernel: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub z_score: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub passed: bool,
}

/// Monte-Carlo comparison of `E‖δ(u)‖²` with
/// `E‖u‖²_{K⊗ℋ_{U_0}} + E⟨D^βu, S(D^βu)⟩`. The z-score uses the standard
/// error of the paired per-draw differences.
pub fn skorohod_moment_check(name: &str, u: &ElementaryProcess, kernel: &CovarianceKernel, q: &QSpec, n_samples: usize, seed: u64) -> Result<SkorohodReport> {
    u.validate()?;
    let uni = universe_for(u, kernel, &[])?;
    let b = Bound::new(u, &uni)?;
    if u.j() != q.j() {
        return Err(Error::Shape(format!("process has J = {}, QSpec has J = {}", u.j(), q.j())));
    }
    let pairs: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let beta = uni.values(&uni.draw_increments(seed, rng::domain::SKOROHOD, s));
            let v = b.evaluate(&beta);
            let d = b.skorohod(&v);
            (dot(&d, &d), b.isometry_rhs(&v))
        })
        .collect();
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (lm, ls) = stats::mean_se(&lhs);
    let (rm, rs) = stats::mean_se(&rhs);
    let (dm, ds) = stats::mean_se(&diff);
    let z = if ds > 0.0 {
        dm.abs() / ds
    } else if dm.abs() <= 1e-12 * lm.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SkorohodReport {
        name: name.into(),
        kernel: kernel.name.to_string(),
        lhs: lm,
        lhs_se: ls,
        rhs: rm,
        rhs_se: rs,
        z_score: z,
        n_samples,
        seed,
        passed: z <= 4.0,
    })
}

/// Monte-Carlo mean and standard error of a per-draw statistic of the
/// Gaussian vector `β(h)` over a universe.
pub fn mc_mean<F>(uni: &Universe, n_samples: usize, seed: u64, stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let x: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|s| stat(&uni.values(&uni.draw_increments(seed, rng::domain::SKOROHOD, s))))
        .collect();
    stats::mean_se(&x)
}

/// Paired Monte-Carlo test of `E[β(φ)F] = E[D_φF]`; returns the z-score.
pub fn integration_by_parts_z(f: &CylinderFunctional, phi: &StepFunction, kernel: &CovarianceKernel, n_samples: usize, seed: u64) -> Result<f64> {
    let mut dirs = f.directions.clone();
    dirs.push(phi.clone());
    let uni = Universe::new(dirs, kernel, &[])?;
    let nd = uni.directions.len();
    let pi = nd - 1;
    let inner: Vec<f64> = (0..f.directions.len()).map(|l| uni.gram[l * nd + pi]).collect();
    let (m, se) = mc_mean(&uni, n_samples, seed, |beta| {
        let x = &beta[..f.directions.len()];
        let d: f64 = f.gradient(x).iter().zip(&inner).map(|(g, i)| g * i).sum();
        beta[pi] * f.eval(x) - d
    });
    Ok(if se > 0.0 { m.abs() / se } else if m == 0.0 { 0.0 } else { f64::INFINITY })
}

/// Paired Monte-Carlo test of `E[(D_φF) G] = E[β(φ)FG − F D_φG]`.
pub fn product_rule_z(f: &CylinderFunctional, g: &CylinderFunctional, phi: &StepFunction, kernel: &CovarianceKernel, n_samples: usize, seed: u64) -> Result<f64> {
    let mut dirs = f.directions.clone();
    dirs.extend(g.directions.iter().cloned());
    dirs.push(phi.clone());
    let uni = Universe::new(dirs, kernel, &[])?;
    let nd = uni.directions.len();
    let (nf, ng) = (f.directions.len(), g.directions.len());
    let pi = nd - 1;
    let col: Vec<f64> = (0..nf + ng).map(|l| uni.gram[l * nd + pi]).collect();
    let (m, se) = mc_mean(&uni, n_samples, seed, |beta| {
        let (xf, xg) = (&beta[..nf], &beta[nf..nf + ng]);
        let dff: f64 = f.gradient(xf).iter().zip(&col[..nf]).map(|(a, b)| a * b).sum();
        let dgg: f64 = g.gradient(xg).iter().zip(&col[nf..]).map(|(a, b)| a * b).sum();
        let (fv, gv) = (f.eval(xf), g.eval(xg));
        dff * gv - (beta[pi] * fv * gv - fv * dgg)
    });
    Ok(if se > 0.0 { m.abs() / se } else if m == 0.0 { 0.0 } else { f64::INFINITY })
}

// ==========================================================================
// Norms on the union partition
// ==========================================================================

/// Piecewise representation of `u` and `D^βu` at one draw: `U_a ∈ K⊗U_0`
/// and `W_{ab} ∈ K⊗U_0⊗U_0` on partition pieces `a` (time `s`) and `b`
/// (time `θ`).
pub struct PieceValues {
    pub u: Vec<Vec<f64>>,
    /// `w_norm[a·P + b] = ‖W_{ab}‖`.
    pub w_norm: Vec<f64>,
}

impl<'a> Bound<'a> {
    pub fn piece_values(&self, v: &DrawValues) -> PieceValues {
        let uni = self.universe;
        let (p, j, m) = (uni.pieces(), uni.j, self.u.m());
        let mut u = vec![vec![0.0; m * j]; p];
        for (i, t) in self.u.terms.iter().enumerate() {
            let c = uni.coords(self.phi_idx[i]);
            for (a, ua) in u.iter_mut().enumerate() {
                for (ci, kv) in t.k.iter().enumerate() {
                    for jj in 0..j {
                        ua[ci * j + jj] += v.f[i] * kv * c[a * j + jj];
                    }
                }
            }
        }
        let mut w_norm = vec![0.0; p * p];
        let mut w = vec![0.0; m * j * j];
        for a in 0..p {
            for b in 0..p {
                w.iter_mut().for_each(|x| *x = 0.0);
                for (i, t) in self.u.terms.iter().enumerate() {
                    let c = &uni.coords(self.phi_idx[i])[a * j..(a + 1) * j];
                    if c.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    for (l, &dl) in self.f_idx[i].iter().enumerate() {
                        let g = v.grad[i][l];
                        let d = &uni.coords(dl)[b * j..(b + 1) * j];
                        if g == 0.0 || d.iter().all(|x| *x == 0.0) {
                            continue;
                        }
                        for (ci, kv) in t.k.iter().enumerate() {
                            for j1 in 0..j {
                                for j2 in 0..j {
                                    w[(ci * j + j1) * j + j2] += g * kv * c[j1] * d[j2];
                                }
                            }
                        }
                    }
                }
                w_norm[a * p + b] = dot(&w, &w).sqrt();
            }
        }
        PieceValues { u, w_norm }
    }
}

/// Monte-Carlo estimates of the `𝔻^{1,p}(|ℋ|)` and `𝕃^{1,p}_r` quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D1pReport {
    /// `E‖u‖^p_{|ℋ_{K⊗U_0}|}`
    pub u_abs: f64,
    /// `E‖D^βu‖^p_{|ℋ|⊗|ℋ|}`
    pub du_abs: f64,
    /// `E∫‖u_s‖^p ds`
    pub u_time: f64,
    /// `E∫(∫‖D_θu_s‖^r dθ)^{p/r} ds`
    pub du_time: f64,
    pub d1p: f64,
    pub l1p: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Mixed-norm estimates for `u`. Time integrals are exact piecewise sums over
/// the union partition.
pub fn d1p_norm(u: &ElementaryProcess, kernel: &CovarianceKernel, p: f64, r_exp: f64, n_samples: usize, seed: u64) -> Result<D1pReport> {
    if !(p >= 2.0) {
        return Err(Error::Invalid(format!("d1p_norm needs p >= 2, got {p}")));
    }
    if u.terms.is_empty() {
        return Ok(D1pReport { u_abs: 0.0, du_abs: 0.0, u_time: 0.0, du_time: 0.0, d1p: 0.0, l1p: 0.0, n_samples, seed });
    }
    let uni = universe_for(u, kernel, &[])?;
    let b = Bound::new(u, &uni)?;
    let np = uni.pieces();
    let len: Vec<f64> = uni.edges.windows(2).map(|w| w[1] - w[0]).collect();
    let abs_inc: Vec<f64> = uni.increments.iter().map(|v| v.abs()).collect();
    let rows: Vec<[f64; 4]> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let beta = uni.values(&uni.draw_increments(seed, rng::domain::SKOROHOD, s));
            let pv = b.piece_values(&b.evaluate(&beta));
            let un: Vec<f64> = pv.u.iter().map(|x| dot(x, x).sqrt()).collect();
            let mut u_abs2 = 0.0;
            for a in 0..np {
                for c in 0..np {
                    u_abs2 += un[a] * un[c] * abs_inc[a * np + c];
                }
            }
            // tr(|I| w |I| wᵀ)
            let w = &pv.w_norm;
            let mut iw = vec![0.0; np * np];
            for a in 0..np {
                for c in 0..np {
                    let x = abs_inc[a * np + c];
                    if x != 0.0 {
                        for bb in 0..np {
                            iw[a * np + bb] += x * w[c * np + bb];
                        }
                    }
                }
            }
            let mut du_abs2 = 0.0;
            for a in 0..np {
                for bb in 0..np {
                    let mut t = 0.0;
                    for c in 0..np {
                        t += w[a * np + c] * abs_inc[c * np + bb];
                    }
                    du_abs2 += iw[a * np + bb] * t;
                }
            }
            let u_time: f64 = (0..np).map(|a| len[a] * un[a].powf(p)).sum();
            let du_time: f64 = (0..np)
                .map(|a| {
                    let inner: f64 = (0..np).map(|c| len[c] * w[a * np + c].powf(r_exp)).sum();
                    len[a] * inner.powf(p / r_exp)
                })
                .sum();
            [u_abs2.max(0.0).powf(p / 2.0), du_abs2.max(0.0).powf(p / 2.0), u_time, du_time]
        })
        .collect();
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n_samples.max(1) as f64;
    let (ua, da, ut, dt) = (mean(0), mean(1), mean(2), mean(3));
    Ok(D1pReport { u_abs: ua, du_abs: da, u_time: ut, du_time: dt, d1p: ua + da, l1p: ut + dt, n_samples, seed })
}

// ==========================================================================
// Standard battery
// ==========================================================================

/// Horizon of the battery processes.
pub const BATTERY_T: f64 = 2.0;

/// Kernels of the standard battery.
pub fn battery_kernels() -> Vec<CovarianceKernel> {
    vec![CovarianceKernel::wiener(BATTERY_T), CovarianceKernel::fbm(0.75, BATTERY_T).expect("valid H")]
}

/// QSpec of the standard battery (`J = 2`).
pub fn battery_q() -> QSpec {
    QSpec { lambdas: vec![1.0, 0.5] }
}

fn step(a: f64, b: f64, v: [f64; 2]) -> StepFunction {
    StepFunction::indicator(a, b, v.to_vec()).expect("valid step")
}

/// `β(φ) k ⊗ φ` with `‖φ‖_ℋ = 1` under `kernel`.
pub fn quadratic_process(kernel: &CovarianceKernel, k: Vec<f64>) -> Result<ElementaryProcess> {
    let raw = step(0.0, 1.0, [1.0, 0.0]);
    let norm = inner_h_u0(&raw, &raw, kernel)?.sqrt();
    let phi = raw.scaled(1.0 / norm);
    ElementaryProcess::new(vec![Term { f: CylinderFunctional::linear(phi.clone()), k, phi }])
}

/// Four elementary processes (`m = 2`, `J = 2`): deterministic, the exact
/// quadratic case, an orthogonal pair and a mixed two-term process.
pub fn standard_battery(kernel: &CovarianceKernel) -> Result<Vec<(String, ElementaryProcess)>> {
    let two_piece = StepFunction::new(vec![0.0, 1.0, 2.0], vec![vec![1.0, 0.0], vec![0.5, 0.5]])?;
    let deterministic = ElementaryProcess::new(vec![Term {
        f: CylinderFunctional::constant(1.0, two_piece.clone()),
        k: vec![1.0, 0.5],
        phi: two_piece,
    }])?;
    let (h1, h2) = (step(0.0, 1.0, [1.0, 0.0]), step(0.0, 1.0, [0.0, 1.0]));
    let orthogonal = ElementaryProcess::new(vec![
        Term { f: CylinderFunctional::new(Shape::ExpNegSquare, vec![h1.clone()])?, k: vec![1.0, 0.0], phi: h1 },
        Term { f: CylinderFunctional::new(Shape::Sine, vec![h2.clone()])?, k: vec![0.0, 1.0], phi: h2 },
    ])?;
    let (g1, g2) = (step(0.0, 1.5, [1.0, 0.0]), step(0.5, 2.0, [0.3, 1.0]));
    let mixed = ElementaryProcess::new(vec![
        Term { f: CylinderFunctional::new(Shape::Sine, vec![g1, g2.clone()])?, k: vec![1.0, 1.0], phi: step(0.0, 1.0, [1.0, 0.5]) },
        Term {
            f: CylinderFunctional::new(Shape::Polynomial { coeffs: vec![1.0, 0.5, -0.25] }, vec![g2])?,
            k: vec![0.5, -1.0],
            phi: step(1.0, 2.0, [0.0, 1.0]),
        },
    ])?;
    Ok(vec![
        ("deterministic".into(), deterministic),
        ("quadratic".into(), quadratic_process(kernel, vec![1.0, 0.0])?),
        ("orthogonal_pair".into(), orthogonal),
        ("mixed".into(), mixed),
    ])
}
