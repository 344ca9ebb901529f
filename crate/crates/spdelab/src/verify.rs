//! Ratio checks for the inequalities. The constants involved are only known
//! to exist, so every check reports an empirical ratio `lhs / Σ rhs` and how
//! it moves under grid refinement.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::gaussian::{dot, uniform_times, QSpec};
use crate::malliavin::{universe_for, Bound, ElementaryProcess};
use crate::rng;
use crate::solver::{self, Estimator, ProblemConfig, SPDEProblem, SolutionEnsemble};
use crate::spectral::{self, Field, GridSpec};
use crate::stats;
use crate::symbols::SymbolSpec;
use crate::{Error, Result};

/// Default tolerance on the relative change of a ratio between levels.
pub const DRIFT_TOL: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub name: String,
    pub lhs: f64,
    /// Standard error of `lhs` (0 for deterministic checks).
    pub lhs_se: f64,
    pub rhs_components: Vec<f64>,
    pub ratio: f64,
    pub refinement_trace: Vec<(usize, f64)>,
    pub drift: f64,
    pub passed: bool,
    pub seed: u64,
    pub n_samples: usize,
}

/// One refinement level of a ratio check.
#[derive(Clone, Debug)]
pub struct Level {
    pub level: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: Vec<f64>,
}

fn ratio_of(lhs: f64, rhs: &[f64]) -> f64 {
    let r: f64 = rhs.iter().sum();
    if lhs == 0.0 && r == 0.0 {
        0.0
    } else {
        lhs / r
    }
}

impl RatioReport {
    /// Report for the finest level, passed iff every ratio is finite and the
    /// drift between consecutive levels stays below `drift_tol`.
    pub fn from_levels(name: &str, levels: &[Level], drift_tol: f64, seed: u64, n_samples: usize) -> Self {
        let trace: Vec<(usize, f64)> = levels.iter().map(|l| (l.level, ratio_of(l.lhs, &l.rhs))).collect();
        let ratios: Vec<f64> = trace.iter().map(|t| t.1).collect();
        let drift = stats::max_relative_drift(&ratios);
        let last = levels.last().expect("at least one level");
        let finite = ratios.iter().all(|r| r.is_finite()) && last.rhs.iter().all(|r| r.is_finite());
        RatioReport {
            name: name.into(),
            lhs: last.lhs,
            lhs_se: last.lhs_se,
            rhs_components: last.rhs.clone(),
            ratio: *ratios.last().unwrap(),
            refinement_trace: trace,
            drift,
            passed: finite && drift < drift_tol,
            seed,
            n_samples,
        }
    }
}

fn check_exponents(p: f64, q: f64, r: f64) -> Result<()> {
    if !(q >= 2f64.max(r) && p >= q) {
        return Err(Error::Hypothesis(format!("need p >= q >= max(2, r), got p = {p}, q = {q}, r = {r}")));
    }
    Ok(())
}

// ==========================================================================
// Maximal inequality
// ==========================================================================

/// Monte-Carlo pieces of the maximal inequality at one time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalLevel {
    pub nodes: usize,
    /// `E sup_t ‖∫_0^t u δβ‖^p` over the partition nodes.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `(∫_0^T ‖E u_s‖^q ds)^{p/q}`
    pub mean_term: f64,
    /// `E(∫_0^T (∫_0^T ‖D_θ u_s‖^r dθ)^{q/r} ds)^{p/q}`
    pub derivative_term: f64,
}

/// One level: the running Skorohod integral is evaluated exactly at every
/// node of the union of `u`'s breakpoints and a uniform grid with `nodes`
/// intervals.
pub fn maximal_level(u: &ElementaryProcess, kernel: &CovarianceKernel, p: f64, q_exp: f64, nodes: usize, n_samples: usize, seed: u64) -> Result<MaximalLevel> {
    Ok(maximal_levels(u, kernel, p, q_exp, &[nodes], n_samples, seed)?.remove(0))
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

/// Several levels from one set of draws. The partition is the union of all
/// level grids, and level `n` takes its supremum over the nodes belonging to
/// `u`'s breakpoints or to the uniform grid with `n` intervals, so the levels
/// differ only by discretisation and not by Monte-Carlo noise.
pub fn maximal_levels(u: &ElementaryProcess, kernel: &CovarianceKernel, p: f64, q_exp: f64, levels: &[usize], n_samples: usize, seed: u64) -> Result<Vec<MaximalLevel>> {
    let r = kernel.r_exp;
    check_exponents(p, q_exp, r)?;
    u.validate()?;
    if levels.iter().any(|&n| n == 0) {
        return Err(Error::Invalid("time grids need at least one interval".into()));
    }
    if u.terms.is_empty() {
        return Ok(levels.iter().map(|&nodes| MaximalLevel { nodes, lhs: 0.0, lhs_se: 0.0, mean_term: 0.0, derivative_term: 0.0 }).collect());
    }
    let t_end = u.end();
    let grids: Vec<Vec<f64>> = levels.iter().map(|&n| uniform_times(t_end, n)).collect();
    let own = universe_for(u, kernel, &[])?.edges;
    let all: Vec<f64> = grids.concat();
    let uni = universe_for(u, kernel, &all)?;
    let b = Bound::new(u, &uni)?;
    let (np, j) = (uni.pieces(), uni.j);
    // active[l][e]: node e counts for level l.
    let active: Vec<Vec<bool>> = grids
        .iter()
        .map(|g| uni.edges.iter().map(|&t| own.iter().chain(g).any(|&x| near(t, x))).collect())
        .collect();
    let len: Vec<f64> = uni.edges.windows(2).map(|w| w[1] - w[0]).collect();
    let phi_idx: Vec<usize> = u.terms.iter().map(|t| uni.index_of(&t.phi).unwrap()).collect();
    let f_idx: Vec<Vec<usize>> = u.terms.iter().map(|t| t.f.directions.iter().map(|h| uni.index_of(h).unwrap()).collect()).collect();
    // dtab[i][l][e] = ⟨h_l, φ_i 1_{(0, t_e]}⟩
    let dtab: Vec<Vec<Vec<f64>>> = (0..u.terms.len())
        .map(|i| {
            let c = uni.coords(phi_idx[i]);
            f_idx[i]
                .iter()
                .map(|&l| {
                    let d = uni.coords(l);
                    let mut acc = vec![0.0; np + 1];
                    for a in 0..np {
                        let mut s = 0.0;
                        for bb in 0..np {
                            s += dot(&c[a * j..(a + 1) * j], &d[bb * j..(bb + 1) * j]) * uni.increments[a * np + bb];
                        }
                        acc[a + 1] = acc[a] + s;
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let m = u.m();
    struct Row {
        sups: Vec<f64>,
        mean_u: Vec<Vec<f64>>,
        dterm: f64,
    }
    let rows: Vec<Row> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let inc = uni.draw_increments(seed, rng::domain::SKOROHOD, s);
            let beta = uni.values(&inc);
            let v = b.evaluate(&beta);
            let mut run = vec![0.0; u.terms.len()];
            let mut sups = vec![0.0f64; levels.len()];
            let mut delta = vec![0.0; m];
            for e in 1..=np {
                let a = e - 1;
                delta.iter_mut().for_each(|x| *x = 0.0);
                for (i, t) in u.terms.iter().enumerate() {
                    run[i] += dot(&uni.coords(phi_idx[i])[a * j..(a + 1) * j], &inc[a * j..(a + 1) * j]);
                    let d: f64 = v.grad[i].iter().zip(&dtab[i]).map(|(g, tab)| g * tab[e]).sum();
                    let coef = run[i] * v.f[i] - d;
                    for (x, k) in delta.iter_mut().zip(&t.k) {
                        *x += coef * k;
                    }
                }
                let val = dot(&delta, &delta).sqrt().powf(p);
                for (sup, act) in sups.iter_mut().zip(&active) {
                    if act[e] {
                        *sup = sup.max(val);
                    }
                }
            }
            let pv = b.piece_values(&v);
            let inner: f64 = (0..np)
                .map(|a| {
                    let th: f64 = (0..np).map(|c| len[c] * pv.w_norm[a * np + c].powf(r)).sum();
                    len[a] * th.powf(q_exp / r)
                })
                .sum();
            Row { sups, mean_u: pv.u, dterm: inner.powf(p / q_exp) }
        })
        .collect();
    let inv = 1.0 / n_samples as f64;
    let mut mean_u = vec![vec![0.0; m * j]; np];
    for row in &rows {
        for (acc, x) in mean_u.iter_mut().zip(&row.mean_u) {
            for (a, b) in acc.iter_mut().zip(x) {
                *a += b * inv;
            }
        }
    }
    let mean_term = (0..np).map(|a| len[a] * dot(&mean_u[a], &mean_u[a]).sqrt().powf(q_exp)).sum::<f64>().powf(p / q_exp);
    let derivative_term = rows.iter().map(|r| r.dterm).sum::<f64>() * inv;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &nodes)| {
            let sups: Vec<f64> = rows.iter().map(|r| r.sups[l]).collect();
            let (lhs, lhs_se) = stats::mean_se(&sups);
            MaximalLevel { nodes, lhs, lhs_se, mean_term, derivative_term }
        })
        .collect())
}

/// `E sup_t ‖∫_0^t u δβ‖^p` against the two right-hand terms, over a list of
/// time-grid refinements.
#[allow(clippy::too_many_arguments)]
pub fn maximal_inequality_check(name: &str, u: &ElementaryProcess, kernel: &CovarianceKernel, q: &QSpec, p: f64, q_exp: f64, n_samples: usize, seed: u64, levels: &[usize]) -> Result<RatioReport> {
    if u.j() != q.j() && !u.terms.is_empty() {
        return Err(Error::Shape(format!("process has J = {}, QSpec has J = {}", u.j(), q.j())));
    }
    if levels.is_empty() {
        return Err(Error::Invalid("need at least one refinement level".into()));
    }
    let out: Vec<Level> = maximal_levels(u, kernel, p, q_exp, levels, n_samples, seed)?
        .into_iter()
        .map(|l| Level { level: l.nodes, lhs: l.lhs, lhs_se: l.lhs_se, rhs: vec![l.mean_term, l.derivative_term] })
        .collect();
    Ok(RatioReport::from_levels(name, &out, DRIFT_TOL, seed, n_samples))
}

/// Independent Gaussian random walk `B` on `n_steps` equal steps of `[0, t]`:
/// mean and standard error of `sup_k |B_k|^p`.
pub fn random_walk_sup(n_steps: usize, t: f64, p: f64, n_samples: usize, seed: u64) -> (f64, f64) {
    let sd = (t / n_steps as f64).sqrt();
    let x: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::substream(seed, rng::domain::RANDOM_WALK, s as u64);
            let (mut b, mut sup) = (0.0f64, 0.0f64);
            for _ in 0..n_steps {
                b += sd * rng::normal(&mut g);
                sup = sup.max(b.abs());
            }
            sup.powf(p)
        })
        .collect();
    stats::mean_se(&x)
}

// ==========================================================================
// Littlewood–Paley
// ==========================================================================

/// Test function `f(s, x, θ_l) = A χ(s) exp(−|x|²/(2 w_l²))` on `(a, b)` with
/// `χ(s) = sin²` supported in the middle half of `(a, b)`, and
/// `w_l = width (1 + l/n_θ)` for the θ-cells `l` of `(0, 1)`. With one cell
/// the θ-integral collapses and the scalar inequality is checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpTest {
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub b: f64,
    pub n_theta: usize,
    pub width: f64,
    pub amplitude: f64,
}

impl Default for LpTest {
    fn default() -> Self {
        LpTest { l: 16.0, a: 0.0, b: 2.0, n_theta: 1, width: 1.0, amplitude: 1.0 }
    }
}

impl LpTest {
    fn chi(&self, s: f64) -> f64 {
        let w = self.b - self.a;
        let (lo, hi) = (self.a + 0.25 * w, self.b - 0.25 * w);
        if s <= lo || s >= hi {
            0.0
        } else {
            (std::f64::consts::PI * (s - lo) / (hi - lo)).sin().powi(2)
        }
    }

    fn profile(&self, grid: &GridSpec, l: usize) -> Field {
        let w = self.width * (1.0 + l as f64 / self.n_theta as f64);
        let amp = self.amplitude;
        Field::from_real(grid, 1, |_, x| amp * (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * w * w)).exp())
    }
}

/// Both sides of the Littlewood–Paley inequality on one `(n, n_t)` level.
#[allow(clippy::too_many_arguments)]
pub fn lp_level(phi: &SymbolSpec, psi: &SymbolSpec, test: &LpTest, p: f64, q_exp: f64, r_exp: f64, n: usize, n_t: usize) -> Result<(f64, f64)> {
    let d = phi.dim;
    let grid = GridSpec::new(d, n, test.l)?;
    let n_theta = test.n_theta.max(1);
    let dtheta = if n_theta == 1 { 1.0 } else { 1.0 / n_theta as f64 };
    let dt = (test.b - test.a) / n_t as f64;
    let vol = grid.cell_volume();
    let expo = q_exp * phi.gamma / psi.gamma - 1.0;
    let phi_vals = spectral::symbol_on_grid(phi, 0.0, &grid)?;
    let profiles: Vec<Vec<Complex64>> = (0..n_theta).map(|l| spectral::forward_transform(&test.profile(&grid, l)).map(|f| f.values)).collect::<Result<_>>()?;
    let freqs: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.frequency(i)).collect();
    let t_mid: Vec<f64> = (0..n_t).map(|i| test.a + (i as f64 + 0.5) * dt).collect();
    let lhs: f64 = t_mid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| -> Result<f64> {
            let mut nodes: Vec<(f64, f64)> = (0..i).map(|k| (t_mid[k], dt)).collect();
            nodes.push((t - 0.25 * dt, 0.5 * dt));
            let mut inner = vec![0.0; grid.len()];
            for (s, w) in nodes {
                let chi = test.chi(s);
                if chi == 0.0 {
                    continue;
                }
                let weight = w * (t - s).powf(expo);
                let mult: Vec<Complex64> = (0..grid.len()).map(|k| phi_vals[k] * spectral::time_integral(psi, t, s, &freqs[k], grid.dt_quad).exp() * chi).collect();
                let mut theta_sum = vec![0.0; grid.len()];
                for prof in &profiles {
                    let mut v: Vec<Complex64> = prof.iter().zip(&mult).map(|(a, b)| a * b).collect();
                    spectral::fft_inverse(&grid, &mut v);
                    for (acc, x) in theta_sum.iter_mut().zip(&v) {
                        *acc += dtheta * x.norm().powf(r_exp);
                    }
                }
                for (acc, x) in inner.iter_mut().zip(&theta_sum) {
                    *acc += weight * x.powf(q_exp / r_exp);
                }
            }
            Ok(dt * vol * inner.iter().map(|v| v.powf(p / q_exp)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    let prof_lp: Vec<f64> = profiles
        .iter()
        .map(|s| {
            let mut v = s.clone();
            spectral::fft_inverse(&grid, &mut v);
            v.iter().map(|x| x.norm().powf(p)).sum::<f64>() * vol
        })
        .collect();
    let rhs: f64 = t_mid
        .iter()
        .map(|&t| {
            let chi = test.chi(t);
            let th: f64 = prof_lp.iter().map(|lp| dtheta * (chi.powf(p) * lp).powf(r_exp / p)).sum();
            dt * th.powf(p / r_exp)
        })
        .sum();
    Ok((lhs, rhs))
}

#[allow(clippy::too_many_arguments)]
pub fn lp_inequality_check(name: &str, phi: &SymbolSpec, psi: &SymbolSpec, test: &LpTest, p: f64, q_exp: f64, r_exp: f64, levels: &[(usize, usize)]) -> Result<RatioReport> {
    check_exponents(p, q_exp, r_exp)?;
    let mut out = Vec::new();
    for &(n, n_t) in levels {
        let (lhs, rhs) = lp_level(phi, psi, test, p, q_exp, r_exp, n, n_t)?;
        out.push(Level { level: n, lhs, lhs_se: 0.0, rhs: vec![rhs] });
    }
    Ok(RatioReport::from_levels(name, &out, DRIFT_TOL, 0, 0))
}

// ==========================================================================
// Bessel-norm equivalence
// ==========================================================================

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselReport {
    pub alpha: f64,
    pub p: f64,
    /// `min ‖u‖_{H^{φ,α}_p} / (‖u‖_p + ‖L_φ^{α/2}u‖_p)` over the battery.
    pub c1_hat: f64,
    /// The corresponding max.
    pub c2_hat: f64,
    pub ratios: Vec<f64>,
    pub passed: bool,
}

pub fn bessel_equivalence_check(phi: &SymbolSpec, alpha: f64, p: f64, battery: &[Field]) -> Result<BesselReport> {
    if !(alpha >= 0.0) || !(p > 1.0) {
        return Err(Error::Invalid(format!("need alpha >= 0 and p > 1, got alpha = {alpha}, p = {p}")));
    }
    let ratios: Vec<f64> = battery
        .iter()
        .map(|u| -> Result<f64> {
            let h = spectral::bessel_norm(u, phi, alpha, p)?;
            let lp = u.lp_norm(p);
            let top = spectral::fractional_power(phi, alpha / 2.0, u)?.lp_norm(p);
            Ok(h / (lp + top))
        })
        .collect::<Result<_>>()?;
    let c1 = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let c2 = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(BesselReport { alpha, p, c1_hat: c1, c2_hat: c2, passed: c1.is_finite() && c1 > 0.0 && c2.is_finite(), ratios })
}

/// Zero-padded copy of a field on a grid refined by `factor` (same period),
/// so the same trigonometric polynomial is sampled more finely.
pub fn upsample(field: &Field, factor: usize) -> Result<Field> {
    let g = &field.grid;
    let fine = GridSpec { n: g.n * factor, ..g.clone() };
    let spec = spectral::forward_transform(field)?;
    let mut out = Field::zeros(&fine, field.m);
    let scale = (fine.len() as f64 / g.len() as f64).sqrt();
    let (nc, nf) = (g.len(), fine.len());
    for idx in 0..nc {
        let k: Vec<i64> = g.multi_index(idx).into_iter().map(|i| g.wavenumber(i)).collect();
        if k.iter().any(|&v| v.unsigned_abs() as usize == g.n / 2) {
            continue;
        }
        let to = fine.mode_index(&k);
        for c in 0..field.m {
            out.values[c * nf + to] = spec.values[c * nc + idx] * scale;
        }
    }
    spectral::inverse_transform(&out)
}

/// Real parts of `count` band-limited random fields.
pub fn bessel_battery(grid: &GridSpec, count: usize, seed: u64) -> Vec<Field> {
    (0..count)
        .map(|i| {
            let f = crate::symbols::band_limited_field(grid, 1, seed, i as u64);
            Field { values: f.values.iter().map(|v| Complex64::new(v.re, 0.0)).collect(), ..f }
        })
        .collect()
}

// ==========================================================================
// The operator 𝒢
// ==========================================================================

/// `f(s, x) = 1_{(0,1)}(s) b(x)` with a real spatial profile `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GTest {
    pub profile: solver::FieldSpec,
}

pub fn default_g_battery() -> Vec<GTest> {
    use solver::FieldSpec::*;
    vec![
        GTest { profile: Bump { amplitude: 1.0, width: 0.5 } },
        GTest { profile: Bump { amplitude: 1.0, width: 1.0 } },
        GTest { profile: Bump { amplitude: 1.0, width: 2.0 } },
        GTest { profile: Mode { k: vec![1], amplitude: 1.0 } },
    ]
}

/// `‖𝒢f‖_{L^p}` and `‖f‖_{L^p}` for one test on a grid with `n_t` time cells
/// over `(0, 3)`; per mode `𝒢f` is exact.
fn g_norms(phi: &SymbolSpec, psi: &SymbolSpec, test: &GTest, p: f64, grid: &GridSpec, n_t: usize) -> Result<(f64, f64)> {
    let nx = grid.len();
    let b = Field { grid: grid.clone(), m: 1, values: (0..nx).map(|i| Complex64::new(test.profile.value(grid, i), 0.0)).collect() };
    let bh = spectral::forward_transform(&b)?.values;
    let phi_v = spectral::symbol_on_grid(phi, 0.0, grid)?;
    let psi_v = spectral::symbol_on_grid(psi, 0.0, grid)?;
    let horizon = 3.0;
    let dt = horizon / n_t as f64;
    let vol = grid.cell_volume();
    let lhs: f64 = (0..n_t)
        .into_par_iter()
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            let top = t.min(1.0);
            let mut v: Vec<Complex64> = (0..nx)
                .map(|k| {
                    let (ph, ps) = (phi_v[k], psi_v[k]);
                    let integral = if ps.norm() == 0.0 { Complex64::new(top, 0.0) } else { ((ps * (t - top)).exp() - (ps * t).exp()) / (-ps) };
                    ph * integral * bh[k]
                })
                .collect();
            spectral::fft_inverse(grid, &mut v);
            dt * vol * v.iter().map(|x| x.norm().powf(p)).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let rhs = b.lp_norm(p).powf(p);
    Ok((lhs.powf(1.0 / p), rhs.powf(1.0 / p)))
}

/// `max_f ‖𝒢f‖_{L^p} / ‖f‖_{L^p}` over a battery, at several `(n, n_t)` levels
/// on the period `l`.
pub fn g_operator_check(phi: &SymbolSpec, psi: &SymbolSpec, battery: &[GTest], p: f64, l: f64, levels: &[(usize, usize)]) -> Result<RatioReport> {
    if (phi.gamma - psi.gamma).abs() > 1e-12 {
        return Err(Error::Hypothesis(format!("the orders must agree, got {} and {}", phi.gamma, psi.gamma)));
    }
    if psi.time_dependent {
        return Err(Error::UnsupportedParameter("the operator check needs a time-independent psi".into()));
    }
    let mut out = Vec::new();
    for &(n, n_t) in levels {
        let grid = GridSpec::new(phi.dim, n, l)?;
        let mut best = Level { level: n, lhs: 0.0, lhs_se: 0.0, rhs: vec![0.0] };
        let mut best_ratio = -1.0;
        for t in battery {
            if let solver::FieldSpec::Mode { k, .. } = &t.profile {
                if k.len() != phi.dim {
                    return Err(Error::Shape("test mode has the wrong dimension".into()));
                }
            }
            let (a, b) = g_norms(phi, psi, t, p, &grid, n_t)?;
            let r = ratio_of(a, &[b]);
            if r > best_ratio {
                best_ratio = r;
                best = Level { level: n, lhs: a, lhs_se: 0.0, rhs: vec![b] };
            }
        }
        out.push(best);
    }
    Ok(RatioReport::from_levels("g_operator", &out, DRIFT_TOL, 0, 0))
}

// ==========================================================================
// Kernel envelopes
// ==========================================================================

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub taus: Vec<f64>,
    /// Fitted constants per bound (`L_φp_ψ`, its gradient, its `s`-derivative)
    /// and per `t − s`.
    pub constants: [Vec<f64>; 3],
    pub exponents: [f64; 3],
    /// `(max − min)/min` of each row of `constants`.
    pub spreads: [f64; 3],
    /// `sup|L_φp_ψ(2τ)| / sup|L_φp_ψ(τ)|` for the first two entries of `taus`
    /// that differ by a factor 2.
    pub scaling_ratio: Option<f64>,
    pub scaling_expected: f64,
    /// Steepest (largest) log-log slope of the tail of `|L_φp_ψ|`.
    pub tail_slope: f64,
    pub passed: bool,
}

/// Tolerance on the constant spread across `t − s`.
pub const ENVELOPE_TOL: f64 = 0.2;

pub fn kernel_envelope_check(phi: &SymbolSpec, psi: &SymbolSpec, taus: &[f64], grid: &GridSpec) -> Result<EnvelopeReport> {
    grid.validate()?;
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Invalid("t − s values must be positive".into()));
    }
    let d = grid.d as f64;
    let (gp, gs) = (phi.gamma, psi.gamma);
    let exps = [gp + d, gp + 1.0 + d, gp + gs + d];
    let nx = grid.len();
    let phi_v = spectral::symbol_on_grid(phi, 0.0, grid)?;
    let psi0 = spectral::symbol_on_grid(psi, 0.0, grid)?;
    let radius: Vec<f64> = (0..nx).map(|i| grid.centred_point(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let inside: Vec<usize> = (0..nx).filter(|&i| radius[i] > 0.0 && radius[i] <= grid.l / 4.0).collect();
    let mut constants = [vec![], vec![], vec![]];
    let mut sups = vec![];
    let mut tail_slope = f64::NEG_INFINITY;
    for &tau in taus {
        let prop = spectral::evolution_multipliers(psi, tau, 0.0, grid)?;
        let base: Vec<Complex64> = (0..nx).map(|k| phi_v[k] * prop[k]).collect();
        let k0 = spectral::kernel_from_multiplier(grid, &base)?;
        let mut grad = vec![0.0; nx];
        for a in 0..grid.d {
            let m: Vec<Complex64> = (0..nx).map(|k| base[k] * Complex64::new(0.0, grid.frequency(k)[a])).collect();
            let g = spectral::kernel_from_multiplier(grid, &m)?;
            for (acc, v) in grad.iter_mut().zip(&g.values) {
                *acc += v.norm_sqr();
            }
        }
        grad.iter_mut().for_each(|v| *v = v.sqrt());
        let ds: Vec<Complex64> = (0..nx).map(|k| -psi0[k] * base[k]).collect();
        let kds = spectral::kernel_from_multiplier(grid, &ds)?;
        let vals: [Vec<f64>; 3] = [k0.values.iter().map(|v| v.norm()).collect(), grad, kds.values.iter().map(|v| v.norm()).collect()];
        for b in 0..3 {
            let c = inside
                .iter()
                .map(|&i| vals[b][i] / radius[i].powf(-exps[b]).min(tau.powf(-exps[b] / gs)))
                .fold(0.0, f64::max);
            constants[b].push(c);
        }
        let sup = vals[0].iter().cloned().fold(0.0, f64::max);
        sups.push(sup);
        // Tail: points beyond the self-similar scale where the kernel is above round-off.
        let scale = tau.powf(1.0 / gs);
        let pts: Vec<(f64, f64)> = inside
            .iter()
            .filter(|&&i| radius[i] >= 2.0 * scale && vals[0][i] > 1e-10 * sup)
            .map(|&i| (radius[i].ln(), vals[0][i].ln()))
            .collect();
        if pts.len() >= 3 {
            tail_slope = tail_slope.max(slope(&pts));
        }
    }
    let spreads = [0, 1, 2].map(|b| stats::relative_spread(&constants[b]));
    let scaling_expected = 2f64.powf(-exps[0] / gs);
    let scaling_ratio = taus.iter().enumerate().find_map(|(i, &t)| taus.iter().position(|&u| (u - 2.0 * t).abs() < 1e-12).map(|jx| sups[jx] / sups[i]));
    let scaling_ok = scaling_ratio.is_none_or(|r| (r / scaling_expected - 1.0).abs() < 0.1);
    let tail_ok = !tail_slope.is_finite() || tail_slope <= -0.85 * exps[0];
    let finite = constants.iter().flatten().all(|c| c.is_finite());
    Ok(EnvelopeReport {
        taus: taus.to_vec(),
        passed: finite && spreads.iter().all(|s| *s < ENVELOPE_TOL) && scaling_ok && tail_ok,
        constants,
        exponents: exps,
        spreads,
        scaling_ratio,
        scaling_expected,
        tail_slope,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

// ==========================================================================
// A-priori estimate
// ==========================================================================

/// Terms of the a-priori estimate for one ensemble. Bessel orders follow the
/// solution space with smoothness index 0: `u` in `H^{φ,2γ_ψ/γ_φ}`, `g` in
/// `H^{φ,γ_ψ/γ_φ}`, `u_0` in `H^{φ,(2γ_ψ/γ_φ)(1−1/p)}`, `f` and `𝔻u` in `L^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionNorms {
    pub u: f64,
    pub du: f64,
    pub g: f64,
    pub u0: f64,
    pub f: f64,
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1]))
}

pub fn solution_norms(problem: &SPDEProblem, ens: &SolutionEnsemble) -> Result<SolutionNorms> {
    let (p, phi, dt) = (problem.p, &problem.phi, problem.dt());
    let ratio = problem.psi.gamma / problem.phi.gamma;
    let (a_u, a_g, a_u0) = (2.0 * ratio, ratio, 2.0 * ratio * (1.0 - 1.0 / p));
    let grid = &problem.grid;
    let nx = grid.len();
    let times = problem.times();
    let lift = |spec: &Field, alpha: f64| -> Result<f64> {
        let m = spectral::bessel_multiplier(phi, alpha, grid)?;
        let mut f = spec.clone();
        for c in 0..f.m {
            for (v, mm) in f.component_mut(c).iter_mut().zip(&m) {
                *v *= mm;
            }
        }
        Ok(spectral::inverse_transform(&f)?.lp_norm(p))
    };
    let f_spec: Vec<Field> = problem.f.iter().map(spectral::forward_transform).collect::<Result<_>>()?;
    let per_sample: Vec<(f64, f64)> = ens
        .spectra
        .par_iter()
        .map(|sample| -> Result<(f64, f64)> {
            let mut un = Vec::with_capacity(times.len());
            let mut dn = Vec::with_capacity(times.len());
            for (i, spec) in sample.iter().enumerate() {
                un.push(lift(spec, a_u)?.powf(p));
                let psi = spectral::symbol_on_grid(&problem.psi, times[i], grid)?;
                let mut d = spec.clone();
                for c in 0..d.m {
                    for (k, v) in d.component_mut(c).iter_mut().enumerate() {
                        *v = *v * psi[k] + f_spec[i].values[c * nx + k];
                    }
                }
                dn.push(spectral::inverse_transform(&d)?.lp_norm(p).powf(p));
            }
            Ok((trapezoid(&un, dt), trapezoid(&dn, dt)))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / ens.n_samples as f64;
    let u = (per_sample.iter().map(|x| x.0).sum::<f64>() * inv).powf(1.0 / p);
    let du = (per_sample.iter().map(|x| x.1).sum::<f64>() * inv).powf(1.0 / p);
    let g = problem
        .g
        .iter()
        .map(|g| spectral::bessel_norm(&g.as_field(), phi, a_g, p).map(|v| dt * v.powf(p)))
        .sum::<Result<f64>>()?
        .powf(1.0 / p);
    let u0 = spectral::bessel_norm(&problem.u0, phi, a_u0, p)?;
    let fl: Vec<f64> = problem.f.iter().map(|f| f.lp_norm(p).powf(p)).collect();
    let f = trapezoid(&fl, dt).powf(1.0 / p);
    Ok(SolutionNorms { u, du, g, u0, f })
}

/// Solution-space norm of the computed ensemble against the data norms,
/// over `(n, n_t)` refinements of a problem configuration.
pub fn apriori_estimate_check(name: &str, config: &ProblemConfig, levels: &[(usize, usize)], n_samples: usize, seed: u64, refine: usize) -> Result<RatioReport> {
    let mut out = Vec::new();
    for &(n, n_t) in levels {
        let mut c = config.clone();
        c.grid.n = n;
        c.n_t = n_t;
        let problem = c.build()?;
        let ens = solver::solve(&problem, n_samples, seed, Estimator::Modewise, refine)?;
        let s = solution_norms(&problem, &ens)?;
        out.push(Level { level: n, lhs: s.u + s.du + s.g + s.u0, lhs_se: 0.0, rhs: vec![s.u0, s.f, s.g] });
    }
    Ok(RatioReport::from_levels(name, &out, DRIFT_TOL, seed, n_samples))
}

/// Heat-type problem used by the a-priori check: `ψ = −|ξ|²`, `φ = |ξ|²`,
/// `d = 1` on `[0, 2π)`, `T = 1`, a single-mode `u_0`, bump `f` and `g`.
pub fn heat_apriori_config(kernel: crate::covariance::KernelConfig) -> ProblemConfig {
    use crate::symbols::SymbolConfig;
    let sym = |name: &str| SymbolConfig { gamma: Some(2.0), ..SymbolConfig::named(name) };
    ProblemConfig {
        grid: GridSpec { d: 1, n: 32, l: 2.0 * std::f64::consts::PI, dt_quad: None },
        psi: sym("neg_power"),
        phi: sym("power"),
        kernel,
        lambdas: vec![1.0],
        t_end: 1.0,
        n_t: 16,
        m: 1,
        u0: solver::FieldSpec::Mode { k: vec![1], amplitude: 1.0 },
        f: solver::FieldSpec::Bump { amplitude: 1.0, width: 0.5 },
        g: solver::GConfig::Diagonal(solver::FieldSpec::Bump { amplitude: 1.0, width: 1.0 }),
        p: 2.0,
        q: 2.0,
        r: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::KernelConfig;
    use crate::malliavin::{battery_kernels, battery_q, standard_battery, CylinderFunctional, Term};
    use crate::gaussian::StepFunction;

    fn det_unit() -> ElementaryProcess {
        let e = StepFunction::indicator(0.0, 1.0, vec![1.0]).unwrap();
        ElementaryProcess::new(vec![Term { f: CylinderFunctional::constant(1.0, e.clone()), k: vec![1.0], phi: e }]).unwrap()
    }

    #[test]
    fn maximal_wiener_deterministic() {
        let k = CovarianceKernel::wiener(1.0);
        let u = det_unit();
        let r = maximal_inequality_check("unit", &u, &k, &QSpec::new(vec![1.0]).unwrap(), 2.0, 2.0, 20_000, 3, &[16, 32]).unwrap();
        assert_eq!(r.rhs_components[1], 0.0);
        assert!((r.rhs_components[0] - 1.0).abs() < 1e-12);
        assert!(r.lhs >= 1.0 - 4.0 * r.lhs_se);
        let (o, se) = random_walk_sup(32, 1.0, 2.0, 20_000, 3);
        assert!(stats::z_score(r.lhs, r.lhs_se, o, se) < 4.0, "{} vs {o}", r.lhs);
        assert!(r.passed);
    }

    #[test]
    fn maximal_battery_is_stable() {
        for k in battery_kernels() {
            for (name, u) in standard_battery(&k).unwrap() {
                let r = maximal_inequality_check(&name, &u, &k, &battery_q(), 2.0, 2.0, 2000, 1, &[8, 16]).unwrap();
                assert!(r.passed, "{name}: {r:?}");
            }
        }
    }

    #[test]
    fn exponent_hypothesis() {
        let k = CovarianceKernel::wiener(1.0);
        assert!(matches!(maximal_level(&det_unit(), &k, 2.0, 3.0, 4, 10, 1), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn lp_heat_is_quarter_and_zero_guard() {
        let phi = SymbolSpec::power(2.0, 1);
        let psi = SymbolSpec::neg_power(2.0, 1.0, 1);
        let t = LpTest::default();
        let r = lp_inequality_check("lp", &phi, &psi, &t, 2.0, 2.0, 2.0, &[(64, 64)]).unwrap();
        // Plancherel on the whole line bounds the p = q = 2 ratio by 1/4.
        assert!(r.ratio > 0.0 && r.ratio < 0.26, "{}", r.ratio);
        let zero = LpTest { amplitude: 0.0, ..t.clone() };
        let z = lp_inequality_check("lp0", &phi, &psi, &zero, 2.0, 2.0, 2.0, &[(32, 16)]).unwrap();
        assert!(z.passed && z.ratio == 0.0);
        let scaled = LpTest { amplitude: 3.0, ..t };
        let s = lp_inequality_check("lp", &phi, &psi, &scaled, 2.0, 2.0, 2.0, &[(64, 64)]).unwrap();
        assert!((s.ratio / r.ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bessel_cases() {
        let phi = SymbolSpec::power(2.0, 1);
        let grid = GridSpec::new(1, 32, 2.0 * std::f64::consts::PI).unwrap();
        let bat = bessel_battery(&grid, 8, 1);
        let r0 = bessel_equivalence_check(&phi, 0.0, 2.0, &bat).unwrap();
        assert!((r0.c1_hat - 0.5).abs() < 1e-12 && (r0.c2_hat - 0.5).abs() < 1e-12);
        let mode = Field::from_real(&grid, 1, |_, x| (3.0 * x[0]).cos());
        let r = bessel_equivalence_check(&phi, 2.0, 3.0, &[mode.clone()]).unwrap();
        let expected = 10.0 / (1.0 + 9.0);
        assert!((r.c1_hat - expected).abs() < 1e-12);
        let up = upsample(&mode, 2).unwrap();
        assert!((up.lp_norm(2.0) - mode.lp_norm(2.0)).abs() < 1e-12);
    }

    #[test]
    fn g_operator_bounds() {
        let phi = SymbolSpec::power(2.0, 1);
        let psi = SymbolSpec::neg_power(2.0, 1.0, 1);
        let r = g_operator_check(&phi, &psi, &default_g_battery(), 2.0, 16.0, &[(32, 64), (64, 128)]).unwrap();
        assert!(r.passed && r.ratio <= 1.0 + 1e-9, "{r:?}");
        let bad = SymbolSpec::power(1.0, 1);
        assert!(matches!(g_operator_check(&bad, &psi, &default_g_battery(), 2.0, 16.0, &[(32, 32)]), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn envelope_heat() {
        let phi = SymbolSpec::power(2.0, 1);
        let psi = SymbolSpec::neg_power(2.0, 1.0, 1);
        let grid = GridSpec::new(1, 256, 16.0).unwrap();
        let r = kernel_envelope_check(&phi, &psi, &[0.1, 0.2, 0.4], &grid).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn apriori_small() {
        let cfg = heat_apriori_config(KernelConfig::named("wiener"));
        let r = apriori_estimate_check("heat_wiener", &cfg, &[(16, 8), (32, 16)], 50, 1, 4).unwrap();
        assert!(r.passed, "{r:?}");
        let mut zero = cfg.clone();
        zero.u0 = solver::FieldSpec::Zero;
        zero.f = solver::FieldSpec::Zero;
        zero.g = solver::GConfig::Diagonal(solver::FieldSpec::Zero);
        let z = apriori_estimate_check("zero", &zero, &[(16, 8)], 5, 1, 1).unwrap();
        assert!(z.passed && z.ratio == 0.0);
    }
}
