//! Symbols of pseudo-differential operators and multiplier-condition checks.
//!
//! A [`SymbolSpec`] pairs an evaluable symbol `ψ(t, ξ)` with the constants a
//! user declares for it: order `γ`, lower constant `κ`, derivative constant
//! `μ` and derivative depth `N`. The checkers sample dyadic frequency sets and
//! estimate derivatives with central differences, so they can witness a
//! violation but never prove a bound.

use std::fmt;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::spectral::{self, Field, GridSpec};
use crate::{Error, Result};

/// Relative finite-difference step, `h = 1e-4·|ξ|`.
pub const FD_RELATIVE_STEP: f64 = 1e-4;
/// Default tolerance on declared constants.
pub const DEFAULT_TOL: f64 = 0.05;
/// Dyadic range `2^-8 … 2^8`.
pub const DYADIC_MIN_EXP: i32 = -8;
pub const DYADIC_MAX_EXP: i32 = 8;
/// Default cap on multiplier constants.
pub const DEFAULT_CAP: f64 = 1e6;
/// Allowed relative growth of a supremum between the two outermost bands.
pub const DEFAULT_GROWTH_TOL: f64 = 0.05;

pub type CustomFn = Arc<dyn Fn(f64, &[f64]) -> Complex64 + Send + Sync>;

/// The evaluable part of a symbol.
#[derive(Clone)]
pub enum SymbolKind {
    /// `|ξ|^γ`
    Power { gamma: f64 },
    /// `|ξ|^γ (a + b e^{-|ξ|^γ})`
    PowerExp { a: f64, b: f64, gamma: f64 },
    /// `e^{|ξ|}`
    ExpAbs,
    /// `-c |ξ|^γ`
    NegPower { gamma: f64, c: f64 },
    /// `-(1 + sin² t) |ξ|²`
    HeatTimeVarying,
    Constant { value: f64 },
    /// `ξ_index`
    Coordinate { index: usize },
    /// `log(1 + |ξ|)`
    LogOnePlus,
    /// `Π |ξ_i|^{a_i} / |ξ|^{Σ a_i}`
    ProductRatio { exponents: Vec<f64> },
    /// `(1 + ψ)^{-s}`
    ResolventPower { base: Box<SymbolKind>, s: f64 },
    /// `φ^t / (1 + ψ)^s`
    RatioPower { phi: Box<SymbolKind>, psi: Box<SymbolKind>, t: f64, s: f64 },
    /// `(1 + φ)^t / (1 + ψ^s)`
    MixedRatio { phi: Box<SymbolKind>, psi: Box<SymbolKind>, t: f64, s: f64 },
    Custom { f: CustomFn, time_dependent: bool },
}

impl fmt::Debug for SymbolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolKind::Power { gamma } => write!(f, "Power({gamma})"),
            SymbolKind::PowerExp { a, b, gamma } => write!(f, "PowerExp({a}, {b}, {gamma})"),
            SymbolKind::ExpAbs => write!(f, "ExpAbs"),
            SymbolKind::NegPower { gamma, c } => write!(f, "NegPower({gamma}, {c})"),
            SymbolKind::HeatTimeVarying => write!(f, "HeatTimeVarying"),
            SymbolKind::Constant { value } => write!(f, "Constant({value})"),
            SymbolKind::Coordinate { index } => write!(f, "Coordinate({index})"),
            SymbolKind::LogOnePlus => write!(f, "LogOnePlus"),
            SymbolKind::ProductRatio { exponents } => write!(f, "ProductRatio({exponents:?})"),
            SymbolKind::ResolventPower { base, s } => write!(f, "ResolventPower({base:?}, {s})"),
            SymbolKind::RatioPower { phi, psi, t, s } => write!(f, "RatioPower({phi:?}, {psi:?}, {t}, {s})"),
            SymbolKind::MixedRatio { phi, psi, t, s } => write!(f, "MixedRatio({phi:?}, {psi:?}, {t}, {s})"),
            SymbolKind::Custom { time_dependent, .. } => write!(f, "Custom(time_dependent = {time_dependent})"),
        }
    }
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

impl SymbolKind {
    fn eval(&self, t: f64, xi: &[f64]) -> Complex64 {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let re = |v: f64| Complex64::new(v, 0.0);
        match self {
            SymbolKind::Power { gamma } => re(r.powf(*gamma)),
            SymbolKind::PowerExp { a, b, gamma } => {
                let rg = r.powf(*gamma);
                re(rg * (a + b * (-rg).exp()))
            }
            SymbolKind::ExpAbs => re(r.exp()),
            SymbolKind::NegPower { gamma, c } => re(-c * r.powf(*gamma)),
            SymbolKind::HeatTimeVarying => re(-(1.0 + t.sin().powi(2)) * r * r),
            SymbolKind::Constant { value } => re(*value),
            SymbolKind::Coordinate { index } => re(xi.get(*index).copied().unwrap_or(f64::NAN)),
            SymbolKind::LogOnePlus => re(r.ln_1p()),
            SymbolKind::ProductRatio { exponents } => {
                if r == 0.0 {
                    return re(0.0);
                }
                let total: f64 = exponents.iter().sum();
                let num: f64 = xi.iter().zip(exponents).map(|(x, a)| x.abs().powf(*a)).product();
                re(num / r.powf(total))
            }
            SymbolKind::ResolventPower { base, s } => (one() + base.eval(t, xi)).powf(-s),
            SymbolKind::RatioPower { phi, psi, t: tp, s } => {
                let ph = phi.eval(t, xi);
                let num = if *tp == 0.0 { one() } else { ph.powf(*tp) };
                num / (one() + psi.eval(t, xi)).powf(*s)
            }
            SymbolKind::MixedRatio { phi, psi, t: tp, s } => {
                (one() + phi.eval(t, xi)).powf(*tp) / (one() + psi.eval(t, xi).powf(*s))
            }
            SymbolKind::Custom { f, .. } => f(t, xi),
        }
    }

    fn time_dependent(&self) -> bool {
        match self {
            SymbolKind::HeatTimeVarying => true,
            SymbolKind::Custom { time_dependent, .. } => *time_dependent,
            SymbolKind::ResolventPower { base, .. } => base.time_dependent(),
            SymbolKind::RatioPower { phi, psi, .. } | SymbolKind::MixedRatio { phi, psi, .. } => {
                phi.time_dependent() || psi.time_dependent()
            }
            _ => false,
        }
    }
}

/// A symbol with its declared class constants.
#[derive(Clone, Debug)]
pub struct SymbolSpec {
    pub kind: SymbolKind,
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub n_depth: usize,
    pub time_dependent: bool,
    pub dim: usize,
    /// Value used at `ξ = 0` instead of the built-in limit.
    pub zero_value: Option<Complex64>,
}

/// Default derivative constant for `|ξ|^γ` up to second order.
fn power_mu(gamma: f64) -> f64 {
    1f64.max(gamma * (gamma - 1.0).abs().max(1.0)).max(gamma * ((gamma - 2.0).abs() + 1.0))
}

impl SymbolSpec {
    pub fn new(kind: SymbolKind, gamma: f64, kappa: f64, mu: f64, dim: usize) -> Self {
        let time_dependent = kind.time_dependent();
        SymbolSpec { kind, gamma, kappa, mu, n_depth: (dim / 2 + 1).max(2), time_dependent, dim, zero_value: None }
    }

    /// `|ξ|^γ` with `κ = 1`.
    pub fn power(gamma: f64, dim: usize) -> Self {
        Self::new(SymbolKind::Power { gamma }, gamma, 1.0, power_mu(gamma), dim)
    }

    /// `|ξ|^γ (a + b e^{-|ξ|^γ})` with `κ = a`.
    pub fn power_exp(a: f64, b: f64, gamma: f64, dim: usize) -> Self {
        Self::new(SymbolKind::PowerExp { a, b, gamma }, gamma, a, (a + b) * power_mu(gamma), dim)
    }

    /// `-c|ξ|^γ` with `κ = c`.
    pub fn neg_power(gamma: f64, c: f64, dim: usize) -> Self {
        Self::new(SymbolKind::NegPower { gamma, c }, gamma, c, c * power_mu(gamma), dim)
    }

    /// `-(1 + sin² t)|ξ|²` with `κ = 1`.
    pub fn heat_time_varying(dim: usize) -> Self {
        Self::new(SymbolKind::HeatTimeVarying, 2.0, 1.0, 2.0 * power_mu(2.0), dim)
    }

    pub fn custom(f: CustomFn, time_dependent: bool, gamma: f64, kappa: f64, mu: f64, dim: usize) -> Self {
        Self::new(SymbolKind::Custom { f, time_dependent }, gamma, kappa, mu, dim)
    }

    /// Multiplier with no order attached (`γ = 0`).
    pub fn multiplier(kind: SymbolKind, dim: usize) -> Self {
        Self::new(kind, 0.0, 1.0, 1.0, dim)
    }

    pub fn with_zero_value(mut self, v: Complex64) -> Self {
        self.zero_value = Some(v);
        self
    }

    pub fn with_constants(mut self, kappa: f64, mu: f64) -> Self {
        self.kappa = kappa;
        self.mu = mu;
        self
    }

    /// `ψ(t, ξ)`, using the limit rule (or the override) at `ξ = 0`.
    pub fn eval(&self, t: f64, xi: &[f64]) -> Complex64 {
        if let Some(z) = self.zero_value {
            if xi.iter().all(|v| *v == 0.0) {
                return z;
            }
        }
        self.kind.eval(t, xi)
    }

    /// Check the structural invariants: positive constants and `N ≥ ⌊d/2⌋+1`.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("symbol dimension must be positive".into()));
        }
        if !(self.kappa > 0.0 && self.mu > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Invalid("symbol constants must be positive".into()));
        }
        if self.n_depth < self.dim / 2 + 1 {
            return Err(Error::Invalid(format!(
                "derivative depth {} is below floor(d/2)+1 = {}",
                self.n_depth,
                self.dim / 2 + 1
            )));
        }
        Ok(())
    }
}

/// Symbol description as it appears in configuration files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<SymbolConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Box<SymbolConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Box<SymbolConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_value: Option<f64>,
}

/// Names accepted in [`SymbolConfig::name`].
pub const BUILTIN_SYMBOLS: [&str; 12] = [
    "power",
    "power_exp",
    "exp_abs",
    "neg_power",
    "heat_time_varying",
    "constant",
    "coordinate",
    "log1p",
    "product_ratio",
    "resolvent_power",
    "ratio_power",
    "mixed_ratio",
];

impl SymbolConfig {
    pub fn named(name: &str) -> Self {
        SymbolConfig { name: name.to_string(), ..Default::default() }
    }

    fn need(&self, v: Option<f64>, field: &str) -> Result<f64> {
        v.ok_or_else(|| Error::Config(format!("symbol '{}' requires '{field}'", self.name)))
    }

    fn sub(&self, v: &Option<Box<SymbolConfig>>, field: &str) -> Result<SymbolKind> {
        let c = v.as_ref().ok_or_else(|| Error::Config(format!("symbol '{}' requires '{field}'", self.name)))?;
        Ok(c.to_kind()?.0)
    }

    /// Kind plus default `(γ, κ, μ)`.
    fn to_kind(&self) -> Result<(SymbolKind, f64, f64, f64)> {
        let out = match self.name.as_str() {
            "power" => {
                let g = self.need(self.gamma, "gamma")?;
                (SymbolKind::Power { gamma: g }, g, 1.0, power_mu(g))
            }
            "power_exp" => {
                let (a, b, g) = (self.need(self.a, "a")?, self.need(self.b, "b")?, self.need(self.gamma, "gamma")?);
                (SymbolKind::PowerExp { a, b, gamma: g }, g, a, (a + b) * power_mu(g))
            }
            "exp_abs" => (SymbolKind::ExpAbs, self.gamma.unwrap_or(1.0), 1.0, 1.0),
            "neg_power" => {
                let g = self.need(self.gamma, "gamma")?;
                let c = self.c.unwrap_or(1.0);
                (SymbolKind::NegPower { gamma: g, c }, g, c, c * power_mu(g))
            }
            "heat_time_varying" => (SymbolKind::HeatTimeVarying, 2.0, 1.0, 2.0 * power_mu(2.0)),
            "constant" => (SymbolKind::Constant { value: self.need(self.value, "value")? }, 0.0, 1.0, 1.0),
            "coordinate" => (SymbolKind::Coordinate { index: self.index.unwrap_or(0) }, 1.0, 1.0, 1.0),
            "log1p" => (SymbolKind::LogOnePlus, 0.0, 1.0, 1.0),
            "product_ratio" => {
                let e = self
                    .exponents
                    .clone()
                    .ok_or_else(|| Error::Config("symbol 'product_ratio' requires 'exponents'".into()))?;
                (SymbolKind::ProductRatio { exponents: e }, 0.0, 1.0, 1.0)
            }
            "resolvent_power" => {
                let base = self.sub(&self.base, "base")?;
                (SymbolKind::ResolventPower { base: Box::new(base), s: self.need(self.s, "s")? }, 0.0, 1.0, 1.0)
            }
            "ratio_power" | "mixed_ratio" => {
                let phi = Box::new(self.sub(&self.phi, "phi")?);
                let psi = Box::new(self.sub(&self.psi, "psi")?);
                let (t, s) = (self.need(self.t, "t")?, self.need(self.s, "s")?);
                let kind = if self.name == "ratio_power" {
                    SymbolKind::RatioPower { phi, psi, t, s }
                } else {
                    SymbolKind::MixedRatio { phi, psi, t, s }
                };
                (kind, 0.0, 1.0, 1.0)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown symbol '{other}'; expected one of {BUILTIN_SYMBOLS:?}"
                )))
            }
        };
        Ok(out)
    }

    /// Build the runtime symbol in dimension `dim`.
    pub fn to_spec(&self, dim: usize) -> Result<SymbolSpec> {
        let (kind, gamma, kappa, mu) = self.to_kind()?;
        if let SymbolKind::ProductRatio { exponents } = &kind {
            if exponents.len() != dim {
                return Err(Error::Config(format!("product_ratio needs {dim} exponents")));
            }
        }
        if let SymbolKind::Coordinate { index } = &kind {
            if *index >= dim {
                return Err(Error::Config(format!("coordinate index {index} out of range for d = {dim}")));
            }
        }
        let mut spec = SymbolSpec::new(kind, self.gamma.unwrap_or(gamma), self.kappa.unwrap_or(kappa), self.mu.unwrap_or(mu), dim);
        if let Some(n) = self.n_depth {
            spec.n_depth = n;
        }
        if let Some(z) = self.zero_value {
            spec.zero_value = Some(Complex64::new(z, 0.0));
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

// ==========================================================================
// Reports
// ==========================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Marcinkiewicz,
    Mihlin,
    Hormander,
    ClassM,
    ClassS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstLocation {
    pub multi_index: Vec<usize>,
    pub xi: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub condition_name: ConditionName,
    pub worst_constant: f64,
    pub worst_location: WorstLocation,
    pub passed: bool,
    pub samples_used: usize,
    /// Estimated lower constant (`inf ψ/|ξ|^γ`), for the class checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_constant: Option<f64>,
    /// `(band exponent ℓ, supremum over the band 2^-ℓ … 2^ℓ)`.
    pub refinement: Vec<(i32, f64)>,
}

/// Options shared by the checkers.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub tol: f64,
    pub cap: f64,
    pub growth_tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { tol: DEFAULT_TOL, cap: DEFAULT_CAP, growth_tol: DEFAULT_GROWTH_TOL }
    }
}

// ==========================================================================
// Sampling and finite differences
// ==========================================================================

/// Signed dyadic frequency samples: every coordinate ranges over
/// `±2^{j/per_octave}` for `2^-8 ≤ |ξ_i| ≤ 2^8`.
pub fn dyadic_samples(d: usize, per_octave: usize) -> Vec<Vec<f64>> {
    let steps = (DYADIC_MAX_EXP - DYADIC_MIN_EXP) as usize * per_octave;
    let mut axis = Vec::with_capacity(2 * (steps + 1));
    for i in 0..=steps {
        let m = 2f64.powf(DYADIC_MIN_EXP as f64 + i as f64 / per_octave as f64);
        axis.push(-m);
        axis.push(m);
    }
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

fn default_samples(d: usize) -> Vec<Vec<f64>> {
    dyadic_samples(d, if d <= 2 { 2 } else { 1 })
}

/// Smallest band exponent `ℓ` with every `|ξ_i| ∈ [2^-ℓ, 2^ℓ]`.
fn band_of(xi: &[f64]) -> i32 {
    xi.iter().map(|v| v.abs().log2().abs().ceil() as i32).max().unwrap_or(0)
}

/// Multi-indices `α ∈ ℕ^d` with `lo ≤ |α| ≤ hi`.
pub fn multi_indices(d: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; d];
    fn rec(axis: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, lo: usize, hi: usize) {
        if axis == cur.len() {
            let total: usize = cur.iter().sum();
            if total >= lo && total <= hi {
                out.push(cur.clone());
            }
            return;
        }
        for a in 0..=left {
            cur[axis] = a;
            rec(axis + 1, left - a, cur, out, lo, hi);
        }
        cur[axis] = 0;
    }
    rec(0, hi, &mut cur, &mut out, lo, hi);
    out
}

fn stencil(order: usize) -> &'static [(i32, f64)] {
    match order {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
    }
}

/// Central-difference estimate of `∂^α f(ξ)` (orders up to 4 per axis).
///
/// The step along axis `i` is `1e-4·|ξ|`, shrunk to `|ξ_i|/4` when needed so
/// that the stencil never crosses the hyperplane `ξ_i = 0`.
pub fn partial_derivative(f: &dyn Fn(&[f64]) -> Complex64, xi: &[f64], alpha: &[usize]) -> Result<Complex64> {
    if alpha.iter().any(|&a| a > 4) {
        return Err(Error::Invalid("finite differences support order <= 4 per axis".into()));
    }
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut steps = Vec::with_capacity(xi.len());
    for (i, &x) in xi.iter().enumerate() {
        if alpha[i] == 0 {
            steps.push(0.0);
            continue;
        }
        let h = (FD_RELATIVE_STEP * r).min(0.25 * x.abs());
        if !(h > 0.0) || x + h == x || h < f64::MIN_POSITIVE * 1e10 {
            return Err(Error::NumericalPrecision(format!("finite-difference step underflow at ξ = {xi:?}")));
        }
        steps.push(h);
    }
    let stencils: Vec<&[(i32, f64)]> = alpha.iter().map(|&a| stencil(a)).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut point = xi.to_vec();
    let mut idx = vec![0usize; xi.len()];
    loop {
        let mut w = 1.0;
        for (i, st) in stencils.iter().enumerate() {
            let (off, c) = st[idx[i]];
            point[i] = xi[i] + off as f64 * steps[i];
            w *= c;
        }
        acc += f(&point) * w;
        let mut axis = 0;
        loop {
            if axis == xi.len() {
                let scale: f64 = alpha.iter().zip(&steps).map(|(&a, &h)| if a == 0 { 1.0 } else { h.powi(a as i32) }).product();
                return Ok(acc / scale);
            }
            idx[axis] += 1;
            if idx[axis] < stencils[axis].len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

struct Sup {
    value: f64,
    alpha: Vec<usize>,
    xi: Vec<f64>,
    t: Option<f64>,
    bands: Vec<(i32, f64)>,
}

impl Sup {
    fn new(bands: &[i32]) -> Self {
        Sup { value: f64::NEG_INFINITY, alpha: vec![], xi: vec![], t: None, bands: bands.iter().map(|&b| (b, f64::NEG_INFINITY)).collect() }
    }

    fn offer(&mut self, v: f64, band: i32, alpha: &[usize], xi: &[f64], t: Option<f64>) {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > self.value {
            self.value = v;
            self.alpha = alpha.to_vec();
            self.xi = xi.to_vec();
            self.t = t;
        }
        for (b, s) in self.bands.iter_mut() {
            if band <= *b && v > *s {
                *s = v;
            }
        }
    }

    fn location(&self) -> WorstLocation {
        WorstLocation { multi_index: self.alpha.clone(), xi: self.xi.clone(), t: self.t }
    }

    /// Finite, below the cap and not growing between the last two bands.
    fn stable(&self, opts: &CheckOptions) -> bool {
        let n = self.bands.len();
        let (inner, outer) = (self.bands[n - 2].1, self.bands[n - 1].1);
        self.value.is_finite() && self.value <= opts.cap && outer <= inner.max(0.0) * (1.0 + opts.growth_tol) + 1e-300
    }
}

const BANDS: [i32; 3] = [4, 6, 8];

// ==========================================================================
// Class checks
// ==========================================================================

/// Check membership in `𝔐_γ`: `ψ ≥ κ|ξ|^γ` and `|∂^α ψ| ≤ μ|ξ|^{γ-|α|}` for
/// `|α| ≤ max_order`, on the given samples (dyadic by default).
pub fn check_class_m(sym: &SymbolSpec, xi_samples: Option<&[Vec<f64>]>, max_order: usize, opts: &CheckOptions) -> Result<MultiplierReport> {
    if sym.time_dependent {
        return Err(Error::ClassViolation("class-M symbols must be time-independent".into()));
    }
    if max_order > sym.n_depth {
        return Err(Error::Invalid(format!("max_order {max_order} exceeds declared depth {}", sym.n_depth)));
    }
    let owned;
    let samples = match xi_samples {
        Some(s) => s,
        None => {
            owned = default_samples(sym.dim);
            &owned
        }
    };
    let f = |x: &[f64]| sym.eval(0.0, x);
    let alphas = multi_indices(sym.dim, 0, max_order);
    let mut lower = f64::INFINITY;
    let mut sup = Sup::new(&BANDS);
    for xi in samples {
        check_sample(xi)?;
        let r = norm(xi);
        let v = f(xi);
        if v.im.abs() > 1e-12 * v.re.abs().max(1.0) {
            return Err(Error::ClassViolation(format!("symbol is not real at ξ = {xi:?}")));
        }
        if !(v.re > 0.0) {
            return Err(Error::ClassViolation(format!("symbol value {} is not positive at ξ = {xi:?}", v.re)));
        }
        lower = lower.min(v.re / r.powf(sym.gamma));
        let band = band_of(xi);
        for alpha in &alphas {
            let k: usize = alpha.iter().sum();
            let dv = partial_derivative(&f, xi, alpha)?;
            sup.offer(dv.norm() * r.powf(k as f64 - sym.gamma), band, alpha, xi, None);
        }
    }
    let passed = lower >= sym.kappa * (1.0 - opts.tol) && sup.value <= sym.mu * (1.0 + opts.tol);
    Ok(MultiplierReport {
        condition_name: ConditionName::ClassM,
        worst_constant: sup.value,
        worst_location: sup.location(),
        passed,
        samples_used: samples.len(),
        lower_constant: Some(lower),
        refinement: sup.bands.clone(),
    })
}

/// Check membership in `𝔖`: `Re ψ(t, ξ) ≤ -κ|ξ|^γ` and
/// `|∂^α ψ(t, ξ)| ≤ μ|ξ|^{γ-|α|}` for `|α| ≤ N` at every time sample.
pub fn check_class_s(sym: &SymbolSpec, t_samples: &[f64], xi_samples: Option<&[Vec<f64>]>, opts: &CheckOptions) -> Result<MultiplierReport> {
    let owned;
    let samples = match xi_samples {
        Some(s) => s,
        None => {
            owned = default_samples(sym.dim);
            &owned
        }
    };
    let alphas = multi_indices(sym.dim, 0, sym.n_depth);
    let mut lower = f64::INFINITY;
    let mut sup = Sup::new(&BANDS);
    for &t in t_samples {
        let f = |x: &[f64]| sym.eval(t, x);
        for xi in samples {
            check_sample(xi)?;
            let r = norm(xi);
            let v = f(xi);
            if v.re > 0.0 {
                return Err(Error::ClassViolation(format!("Re ψ = {} > 0 at t = {t}, ξ = {xi:?}", v.re)));
            }
            lower = lower.min(-v.re / r.powf(sym.gamma));
            let band = band_of(xi);
            for alpha in &alphas {
                let k: usize = alpha.iter().sum();
                let dv = partial_derivative(&f, xi, alpha)?;
                sup.offer(dv.norm() * r.powf(k as f64 - sym.gamma), band, alpha, xi, Some(t));
            }
        }
    }
    let passed = lower >= sym.kappa * (1.0 - opts.tol) && sup.value <= sym.mu * (1.0 + opts.tol);
    Ok(MultiplierReport {
        condition_name: ConditionName::ClassS,
        worst_constant: sup.value,
        worst_location: sup.location(),
        passed,
        samples_used: samples.len() * t_samples.len(),
        lower_constant: Some(lower),
        refinement: sup.bands.clone(),
    })
}

fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_sample(xi: &[f64]) -> Result<()> {
    if xi.iter().any(|v| *v == 0.0) {
        return Err(Error::Invalid(format!("sample {xi:?} lies on a coordinate hyperplane")));
    }
    Ok(())
}

// ==========================================================================
// Multiplier theorems
// ==========================================================================

/// Mihlin quantity `sup |∂^α m(ξ)|·|ξ|^{|α|}` for `|α| ≤ ⌊d/2⌋+1`.
pub fn check_mihlin(m: &SymbolSpec, xi_samples: Option<&[Vec<f64>]>, opts: &CheckOptions) -> Result<MultiplierReport> {
    let owned;
    let samples = match xi_samples {
        Some(s) => s,
        None => {
            owned = default_samples(m.dim);
            &owned
        }
    };
    let f = |x: &[f64]| m.eval(0.0, x);
    let alphas = multi_indices(m.dim, 0, m.dim / 2 + 1);
    let mut sup = Sup::new(&BANDS);
    for xi in samples {
        check_sample(xi)?;
        let r = norm(xi);
        let band = band_of(xi);
        for alpha in &alphas {
            let k: usize = alpha.iter().sum();
            let dv = partial_derivative(&f, xi, alpha)?;
            sup.offer(dv.norm() * r.powi(k as i32), band, alpha, xi, None);
        }
    }
    Ok(MultiplierReport {
        condition_name: ConditionName::Mihlin,
        worst_constant: sup.value,
        worst_location: sup.location(),
        passed: sup.stable(opts),
        samples_used: samples.len(),
        lower_constant: None,
        refinement: sup.bands.clone(),
    })
}

/// Hörmander quantity `sup_R R^{-d+2|α|} ∫_{R<|ξ|<2R} |∂^α m|²` over dyadic
/// `R`, with a midpoint rule of `points_per_axis^d` cells on `[-2R, 2R]^d`.
pub fn check_hormander(m: &SymbolSpec, points_per_axis: usize, opts: &CheckOptions) -> Result<MultiplierReport> {
    let d = m.dim;
    let npa = points_per_axis + points_per_axis % 2;
    let f = |x: &[f64]| m.eval(0.0, x);
    let alphas = multi_indices(d, 0, d / 2 + 1);
    let mut sup = Sup::new(&BANDS);
    let mut used = 0;
    for j in DYADIC_MIN_EXP..DYADIC_MAX_EXP {
        let r0 = 2f64.powi(j);
        let h = 4.0 * r0 / npa as f64;
        let cell = h.powi(d as i32);
        let band = j.abs().max((j + 1).abs());
        for alpha in &alphas {
            let k: usize = alpha.iter().sum();
            let mut integral = 0.0;
            let total = npa.pow(d as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut xi = vec![0.0; d];
                for v in xi.iter_mut() {
                    *v = -2.0 * r0 + (rem % npa) as f64 * h + 0.5 * h;
                    rem /= npa;
                }
                let r = norm(&xi);
                if r <= r0 || r >= 2.0 * r0 {
                    continue;
                }
                used += 1;
                integral += partial_derivative(&f, &xi, alpha)?.norm_sqr() * cell;
            }
            let q = r0.powi(2 * k as i32 - d as i32) * integral;
            sup.offer(q, band, alpha, &vec![r0; d], None);
        }
    }
    Ok(MultiplierReport {
        condition_name: ConditionName::Hormander,
        worst_constant: sup.value,
        worst_location: sup.location(),
        passed: sup.stable(opts),
        samples_used: used,
        lower_constant: None,
        refinement: sup.bands.clone(),
    })
}

/// Marcinkiewicz quantity: for every subset `S` of the variables, the
/// supremum over dyadic rectangles `A` (in the `S` variables, other variables
/// fixed at dyadic points) of `∫_A |∂_S m|`. The empty subset contributes
/// `sup |m|`. At most `rectangle_budget` rectangles are visited per subset.
pub fn check_marcinkiewicz(m: &SymbolSpec, rectangle_budget: usize, opts: &CheckOptions) -> Result<MultiplierReport> {
    let d = m.dim;
    let gl = GaussLegendre::new(std::num::NonZeroUsize::new(6).unwrap());
    let nodes: Vec<(f64, f64)> = gl.iter().map(|(x, w)| (*x, *w)).collect();
    let f = |x: &[f64]| m.eval(0.0, x);
    let fixed_axis: Vec<f64> = (DYADIC_MIN_EXP..=DYADIC_MAX_EXP).flat_map(|j| [-(2f64.powi(j)), 2f64.powi(j)]).collect();
    // Intervals ±[2^j, 2^{j+1}] as (lo, hi, band).
    let intervals: Vec<(f64, f64, i32)> = (DYADIC_MIN_EXP..DYADIC_MAX_EXP)
        .flat_map(|j| {
            let (a, b) = (2f64.powi(j), 2f64.powi(j + 1));
            let band = j.abs().max((j + 1).abs());
            [(-b, -a, band), (a, b, band)]
        })
        .collect();
    let mut sup = Sup::new(&BANDS);
    let mut used = 0usize;
    for mask in 0u32..(1 << d) {
        let chosen: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let others: Vec<usize> = (0..d).filter(|i| mask & (1 << i) == 0).collect();
        let alpha: Vec<usize> = (0..d).map(|i| usize::from(mask & (1 << i) != 0)).collect();
        let n_rect = intervals.len().pow(chosen.len() as u32) * fixed_axis.len().pow(others.len() as u32);
        let stride = (n_rect + rectangle_budget - 1) / rectangle_budget.max(1);
        let mut r = 0;
        while r < n_rect {
            let mut rem = r;
            let mut rect = Vec::with_capacity(chosen.len());
            for _ in &chosen {
                rect.push(intervals[rem % intervals.len()]);
                rem /= intervals.len();
            }
            let mut base = vec![0.0; d];
            let mut band = 0;
            for &o in &others {
                let v = fixed_axis[rem % fixed_axis.len()];
                rem /= fixed_axis.len();
                base[o] = v;
                band = band.max(v.abs().log2().abs().ceil() as i32);
            }
            for (lo, hi, b) in &rect {
                let _ = (lo, hi);
                band = band.max(*b);
            }
            let value = if chosen.is_empty() {
                f(&base).norm()
            } else {
                let k = chosen.len();
                let mut integral = 0.0;
                let total = nodes.len().pow(k as u32);
                for q in 0..total {
                    let mut qr = q;
                    let mut w = 1.0;
                    let mut xi = base.clone();
                    for (ci, &axis) in chosen.iter().enumerate() {
                        let (x, wt) = nodes[qr % nodes.len()];
                        qr /= nodes.len();
                        let (lo, hi, _) = rect[ci];
                        xi[axis] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
                        w *= 0.5 * (hi - lo) * wt;
                    }
                    integral += w * partial_derivative(&f, &xi, &alpha)?.norm();
                }
                integral
            };
            used += 1;
            let loc: Vec<f64> = (0..d)
                .map(|i| match chosen.iter().position(|&c| c == i) {
                    Some(ci) => 0.5 * (rect[ci].0 + rect[ci].1),
                    None => base[i],
                })
                .collect();
            sup.offer(value, band, &alpha, &loc, None);
            r += stride.max(1);
        }
    }
    Ok(MultiplierReport {
        condition_name: ConditionName::Marcinkiewicz,
        worst_constant: sup.value,
        worst_location: sup.location(),
        passed: sup.stable(opts),
        samples_used: used,
        lower_constant: None,
        refinement: sup.bands.clone(),
    })
}

// ==========================================================================
// Empirical operator norm
// ==========================================================================

/// Random real band-limited test function: Gaussian coefficients on the modes
/// with every `|k_i| < n/4`.
pub fn band_limited_field(grid: &GridSpec, m: usize, seed: u64, index: u64) -> Field {
    let mut r = rng::substream(seed, rng::domain::TEST_FUNCTIONS, index);
    let n = grid.len();
    let mut f = Field::zeros(grid, m);
    for c in 0..m {
        let comp = f.component_mut(c);
        for (idx, v) in comp.iter_mut().enumerate().take(n) {
            let multi = grid.multi_index(idx);
            let inside = multi.iter().all(|&i| grid.wavenumber(i).unsigned_abs() < (grid.n / 4) as u64);
            let (a, b) = (rng::normal(&mut r), rng::normal(&mut r));
            if inside {
                *v = Complex64::new(a, b);
            }
        }
        spectral::fft_inverse(grid, comp);
        for v in comp.iter_mut() {
            *v = Complex64::new(v.re, 0.0);
        }
    }
    f
}

/// `max ‖F⁻¹(m·Ff)‖_p / ‖f‖_p` over `trials` random band-limited functions.
pub fn empirical_multiplier_norm(m: &SymbolSpec, p: f64, trials: usize, grid: &GridSpec, seed: u64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::Invalid(format!("empirical multiplier norm needs p > 1, got {p}")));
    }
    grid.validate()?;
    let mult = spectral::symbol_on_grid(m, 0.0, grid)?;
    let mut best: f64 = 0.0;
    let mut index = 0u64;
    let mut done = 0;
    while done < trials {
        let f = band_limited_field(grid, 1, seed, index);
        index += 1;
        let denom = f.lp_norm(p);
        if !(denom > 0.0) {
            continue;
        }
        let g = spectral::apply_multiplier_values(&f, &mult)?;
        best = best.max(g.lp_norm(p) / denom);
        done += 1;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> SymbolConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn config_parsing_and_rejection() {
        let s = cfg(r#"{"name":"power","gamma":2.0}"#).to_spec(1).unwrap();
        assert_eq!(s.gamma, 2.0);
        assert!(serde_json::from_str::<SymbolConfig>(r#"{"name":"power","gamma":2.0,"bogus":1}"#).is_err());
        assert!(cfg(r#"{"name":"power"}"#).to_spec(1).is_err());
        assert!(cfg(r#"{"name":"nope"}"#).to_spec(1).is_err());
        let m = cfg(r#"{"name":"ratio_power","t":1,"s":1,"phi":{"name":"power","gamma":2},"psi":{"name":"power","gamma":2}}"#)
            .to_spec(2)
            .unwrap();
        let v = m.eval(0.0, &[1.0, 1.0]);
        assert!((v.re - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_frequency_limits() {
        let s = SymbolSpec::power_exp(1.0, 1.0, 2.0, 2);
        assert_eq!(s.eval(0.0, &[0.0, 0.0]).re, 0.0);
        let c = SymbolSpec::power(2.0, 1).with_zero_value(Complex64::new(5.0, 0.0));
        assert_eq!(c.eval(0.0, &[0.0]).re, 5.0);
    }

    #[test]
    fn finite_differences_of_polynomial() {
        let f = |x: &[f64]| Complex64::new(x[0].powi(3) * x[1], 0.0);
        let d = partial_derivative(&f, &[1.5, -0.7], &[2, 1]).unwrap();
        assert!((d.re - 6.0 * 1.5).abs() < 1e-5, "{d}");
        let d3 = partial_derivative(&f, &[1.5, -0.7], &[3, 0]).unwrap();
        assert!((d3.re - 6.0 * -0.7).abs() < 1e-3, "{d3}");
    }

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(multi_indices(2, 0, 2).len(), 6);
        assert_eq!(multi_indices(3, 1, 1).len(), 3);
    }

    #[test]
    fn power_symbol_is_class_m() {
        let s = SymbolSpec::power(2.0, 1);
        let r = check_class_m(&s, None, 2, &CheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        // ∂|ξ|² = 2ξ: the ratio |∂ψ|·|ξ|^{1-γ} equals 2.
        assert!((r.worst_constant - 2.0).abs() < 1e-6);
        assert!((r.lower_constant.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_exp_is_class_m() {
        let s = SymbolSpec::power_exp(1.0, 1.0, 2.0, 1);
        let r = check_class_m(&s, None, 2, &CheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn power_exp_composes_with_lemma_premises() {
        // ψ = |ξ|^γ f with f = a + b e^{-|ξ|^γ}: f ≥ a > 0 and f has bounded
        // scaled derivatives, so the product passes whenever f does.
        let f = SymbolSpec::custom(Arc::new(|_, x: &[f64]| Complex64::new(1.0 + (-(x[0] * x[0] + x[1] * x[1])).exp(), 0.0)), false, 0.0, 1.0, 4.0, 2);
        let rf = check_class_m(&f, None, 2, &CheckOptions::default()).unwrap();
        assert!(rf.passed, "{rf:?}");
        let psi = SymbolSpec::power_exp(1.0, 1.0, 2.0, 2).with_constants(1.0, 12.0);
        assert!(check_class_m(&psi, None, 2, &CheckOptions::default()).unwrap().passed);
    }

    #[test]
    fn exponential_symbol_fails_class_m() {
        let s = SymbolSpec::new(SymbolKind::ExpAbs, 1.0, 1.0, 1.0, 1);
        let r = check_class_m(&s, None, 1, &CheckOptions::default()).unwrap();
        assert!(!r.passed);
        assert!(r.worst_constant > 1e50);
    }

    #[test]
    fn negative_symbol_is_class_violation() {
        let s = SymbolSpec::neg_power(2.0, 1.0, 1);
        assert!(matches!(check_class_m(&s, None, 1, &CheckOptions::default()), Err(Error::ClassViolation(_))));
    }

    #[test]
    fn class_s_examples() {
        let ts = [0.0, 0.3, 0.7, 1.1, 1.6, 2.5];
        let heat = SymbolSpec::neg_power(2.0, 1.0, 1);
        let r = check_class_s(&heat, &ts, None, &CheckOptions::default()).unwrap();
        assert!(r.passed && (r.lower_constant.unwrap() - 1.0).abs() < 1e-12);
        let tv = SymbolSpec::heat_time_varying(1);
        let r = check_class_s(&tv, &ts, None, &CheckOptions::default()).unwrap();
        assert!(r.passed && r.lower_constant.unwrap() >= 1.0 - 1e-12);
        let wrong = SymbolSpec::power(2.0, 1);
        assert!(matches!(check_class_s(&wrong, &ts, None, &CheckOptions::default()), Err(Error::ClassViolation(_))));
    }

    #[test]
    fn marcinkiewicz_examples() {
        let opts = CheckOptions::default();
        let m2 = SymbolSpec::multiplier(SymbolKind::ProductRatio { exponents: vec![1.0, 1.0] }, 2);
        let r = check_marcinkiewicz(&m2, 10_000, &opts).unwrap();
        assert!(r.passed, "{r:?}");
        let one = SymbolSpec::multiplier(SymbolKind::Constant { value: 1.0 }, 2);
        let r = check_marcinkiewicz(&one, 10_000, &opts).unwrap();
        assert!(r.passed);
        assert!((r.worst_constant - 1.0).abs() < 1e-12);
        let xi1 = SymbolSpec::multiplier(SymbolKind::Coordinate { index: 0 }, 2);
        assert!(!check_marcinkiewicz(&xi1, 10_000, &opts).unwrap().passed);
    }

    #[test]
    fn mihlin_examples() {
        let opts = CheckOptions::default();
        let psi = SymbolKind::Power { gamma: 2.0 };
        let m1 = SymbolSpec::multiplier(SymbolKind::ResolventPower { base: Box::new(psi.clone()), s: 1.0 }, 1);
        assert!(check_mihlin(&m1, None, &opts).unwrap().passed);
        let m3 = SymbolSpec::multiplier(
            SymbolKind::MixedRatio { phi: Box::new(psi.clone()), psi: Box::new(psi.clone()), t: 1.0, s: 1.0 },
            1,
        );
        assert!(check_mihlin(&m3, None, &opts).unwrap().passed);
        let log = SymbolSpec::multiplier(SymbolKind::LogOnePlus, 1);
        assert!(!check_mihlin(&log, None, &opts).unwrap().passed);
    }

    #[test]
    fn resolvent_powers_pass_mihlin() {
        let opts = CheckOptions::default();
        for s in [-2.0, -1.0, 1.0, 2.0] {
            let m = SymbolSpec::multiplier(SymbolKind::ResolventPower { base: Box::new(SymbolKind::Power { gamma: 2.0 }), s }, 2);
            let r = check_mihlin(&m, None, &opts).unwrap();
            // Negative s gives (1+ψ)^{|s|}, which grows: the checker must flag it.
            assert_eq!(r.passed, s > 0.0, "s = {s}: {r:?}");
        }
    }

    #[test]
    fn hormander_on_resolvent() {
        let m = SymbolSpec::multiplier(SymbolKind::ResolventPower { base: Box::new(SymbolKind::Power { gamma: 2.0 }), s: 1.0 }, 2);
        let r = check_hormander(&m, 24, &CheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        let x = SymbolSpec::multiplier(SymbolKind::Coordinate { index: 0 }, 1);
        assert!(!check_hormander(&x, 24, &CheckOptions::default()).unwrap().passed);
    }

    #[test]
    fn empirical_norm_examples() {
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let one = SymbolSpec::multiplier(SymbolKind::Constant { value: 1.0 }, 1);
        for p in [1.5, 2.0, 4.0] {
            let r = empirical_multiplier_norm(&one, p, 5, &g, 3).unwrap();
            assert!((r - 1.0).abs() < 1e-10, "{r}");
        }
        let res = SymbolSpec::multiplier(SymbolKind::ResolventPower { base: Box::new(SymbolKind::Power { gamma: 2.0 }), s: 1.0 }, 1);
        assert!(empirical_multiplier_norm(&res, 2.0, 8, &g, 3).unwrap() <= 1.0 + 1e-12);
        let a = empirical_multiplier_norm(&res, 4.0, 8, &g, 11).unwrap();
        let b = empirical_multiplier_norm(&res, 4.0, 8, &g, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
