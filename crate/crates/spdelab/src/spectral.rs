//! Periodic grids, fields and Fourier-multiplier operators.
//!
//! Frequencies are `ξ = 2πk/L` with `k ∈ {-n/2, …, n/2-1}^d` in FFT order. The
//! discrete transform is unitary, so `‖f‖_{ℓ²} = ‖Ff‖_{ℓ²}` holds exactly up
//! to round-off. Continuous quantities (L^p norms, kernels) carry the cell
//! volume `(L/n)^d` explicitly.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::symbols::SymbolSpec;
use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Default number of Simpson intervals for `∫_s^t ψ(r, ξ) dr`.
pub const DEFAULT_SIMPSON_INTERVALS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    /// Quadrature step for time integrals of symbols; `None` means `(t-s)/64`.
    #[serde(default)]
    pub dt_quad: Option<f64>,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Self> {
        let g = GridSpec { d, n, l, dt_quad: None };
        g.validate()?;
        Ok(g)
    }

    pub fn with_dt_quad(mut self, dt: f64) -> Self {
        self.dt_quad = Some(dt);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Invalid("grid dimension must be at least 1".into()));
        }
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::Invalid(format!("n = {} must be a power of two >= 4", self.n)));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::Invalid(format!("period L = {} must be positive", self.l)));
        }
        if let Some(dt) = self.dt_quad {
            if !(dt > 0.0) {
                return Err(Error::Invalid("dt_quad must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of grid points `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    /// Signed wavenumber of FFT index `i` along one axis.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.n + (i % self.n))
    }

    /// Flat index of the Fourier mode with signed wavenumbers `k`.
    pub fn mode_index(&self, k: &[i64]) -> usize {
        let n = self.n as i64;
        let multi: Vec<usize> = k.iter().map(|&ki| ki.rem_euclid(n) as usize).collect();
        self.flat_index(&multi)
    }

    pub fn frequency(&self, idx: usize) -> Vec<f64> {
        let scale = 2.0 * std::f64::consts::PI / self.l;
        self.multi_index(idx).into_iter().map(|i| scale * self.wavenumber(i) as f64).collect()
    }

    /// All frequencies, flattened as `len() × d`.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.d);
        for idx in 0..self.len() {
            out.extend(self.frequency(idx));
        }
        out
    }

    /// Grid point in `[0, L)^d`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let dx = self.dx();
        self.multi_index(idx).into_iter().map(|i| i as f64 * dx).collect()
    }

    /// Grid point mapped to the centred box `[-L/2, L/2)^d`.
    pub fn centred_point(&self, idx: usize) -> Vec<f64> {
        let dx = self.dx();
        self.multi_index(idx).into_iter().map(|i| self.wavenumber(i) as f64 * dx).collect()
    }

    /// Flat index of the conjugate mode `-k`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let multi: Vec<usize> = self.multi_index(idx).into_iter().map(|i| (self.n - i) % self.n).collect();
        self.flat_index(&multi)
    }
}

/// K-valued field on the grid; `values[c * len + idx]` is component `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub m: usize,
    pub values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &GridSpec, m: usize) -> Self {
        Field { grid: grid.clone(), m, values: vec![Complex64::new(0.0, 0.0); m * grid.len()] }
    }

    pub fn new(grid: &GridSpec, m: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != m * grid.len() {
            return Err(Error::Shape(format!(
                "expected {} values for m = {m} on {} points, got {}",
                m * grid.len(),
                grid.len(),
                values.len()
            )));
        }
        Ok(Field { grid: grid.clone(), m, values })
    }

    /// Field from a function of (component, centred point).
    pub fn from_fn(grid: &GridSpec, m: usize, f: impl Fn(usize, &[f64]) -> Complex64) -> Self {
        let n = grid.len();
        let mut values = Vec::with_capacity(m * n);
        for c in 0..m {
            for idx in 0..n {
                values.push(f(c, &grid.centred_point(idx)));
            }
        }
        Field { grid: grid.clone(), m, values }
    }

    pub fn from_real(grid: &GridSpec, m: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        Self::from_fn(grid, m, |c, x| Complex64::new(f(c, x), 0.0))
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Plain `ℓ²` norm of the coefficient array (no cell volume).
    pub fn l2_discrete(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Pointwise Euclidean norm over the `m` components.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .map(|idx| (0..self.m).map(|c| self.values[c * n + idx].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    /// Riemann-sum `L^p` norm with cell volume `(L/n)^d`; `p = ∞` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_of(&self.pointwise_norms(), p, self.grid.cell_volume())
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field { grid: self.grid.clone(), m: self.m, values: self.values.iter().map(|v| v * a).collect() }
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Field { grid: self.grid.clone(), m: self.m, values })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Field { grid: self.grid.clone(), m: self.m, values })
    }

    fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::Shape("fields live on different grids or codomains".into()));
        }
        Ok(())
    }
}

/// `(Σ |v|^p · vol)^{1/p}`, or `max |v|` for infinite `p`.
pub fn lp_norm_of(pointwise: &[f64], p: f64, vol: f64) -> f64 {
    if p.is_infinite() {
        return pointwise.iter().cloned().fold(0.0, f64::max);
    }
    (pointwise.iter().map(|v| v.powf(p)).sum::<f64>() * vol).powf(1.0 / p)
}

/// `K ⊗ U_0`-valued field: an `m × J` matrix per grid point,
/// `values[(c * J + j) * len + idx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorField {
    pub grid: GridSpec,
    pub m: usize,
    pub j: usize,
    pub values: Vec<Complex64>,
}

impl OperatorField {
    pub fn zeros(grid: &GridSpec, m: usize, j: usize) -> Self {
        OperatorField { grid: grid.clone(), m, j, values: vec![Complex64::new(0.0, 0.0); m * j * grid.len()] }
    }

    pub fn from_real(grid: &GridSpec, m: usize, j: usize, f: impl Fn(usize, usize, &[f64]) -> f64) -> Self {
        let n = grid.len();
        let mut values = Vec::with_capacity(m * j * n);
        for c in 0..m {
            for jj in 0..j {
                for idx in 0..n {
                    values.push(Complex64::new(f(c, jj, &grid.centred_point(idx)), 0.0));
                }
            }
        }
        OperatorField { grid: grid.clone(), m, j, values }
    }

    pub fn entry(&self, c: usize, jj: usize) -> &[Complex64] {
        let n = self.grid.len();
        let o = (c * self.j + jj) * n;
        &self.values[o..o + n]
    }

    /// The `m·J` entries viewed as one field with `m·J` components, which
    /// carries the Hilbert–Schmidt norm pointwise.
    pub fn as_field(&self) -> Field {
        Field { grid: self.grid.clone(), m: self.m * self.j, values: self.values.clone() }
    }

    pub fn from_field(f: Field, m: usize, j: usize) -> Result<Self> {
        if f.m != m * j {
            return Err(Error::Shape(format!("field has {} components, expected {m}x{j}", f.m)));
        }
        Ok(OperatorField { grid: f.grid, m, j, values: f.values })
    }
}

fn transform_component(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let total = grid.len();
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.d {
        let stride = n.pow((grid.d - 1 - axis) as u32);
        let outer = total / (stride * n);
        for o in 0..outer {
            for i in 0..stride {
                let base = o * stride * n + i;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
    let norm = 1.0 / (total as f64).sqrt();
    for v in data.iter_mut() {
        *v *= norm;
    }
}

/// Unitary forward transform of a single component array.
pub fn fft_forward(grid: &GridSpec, data: &mut [Complex64]) {
    transform_component(grid, data, false);
}

/// Unitary inverse transform of a single component array.
pub fn fft_inverse(grid: &GridSpec, data: &mut [Complex64]) {
    transform_component(grid, data, true);
}

pub fn forward_transform(field: &Field) -> Result<Field> {
    check_field(field)?;
    let mut out = field.clone();
    for c in 0..out.m {
        fft_forward(&field.grid, out.component_mut(c));
    }
    Ok(out)
}

pub fn inverse_transform(field: &Field) -> Result<Field> {
    check_field(field)?;
    let mut out = field.clone();
    for c in 0..out.m {
        fft_inverse(&field.grid, out.component_mut(c));
    }
    Ok(out)
}

fn check_field(field: &Field) -> Result<()> {
    field.grid.validate()?;
    if field.values.len() != field.m * field.grid.len() {
        return Err(Error::Shape(format!(
            "field has {} values, grid and m require {}",
            field.values.len(),
            field.m * field.grid.len()
        )));
    }
    Ok(())
}

/// True when the spectrum of a field satisfies `F(-k) = conj F(k)` within `tol`.
pub fn is_conjugate_symmetric(spectrum: &Field, tol: f64) -> bool {
    let n = spectrum.grid.len();
    (0..spectrum.m).all(|c| {
        let s = spectrum.component(c);
        (0..n).all(|idx| (s[idx] - s[spectrum.grid.conjugate_index(idx)].conj()).norm() <= tol)
    })
}

/// Symbol values `ψ(t, ξ)` at every grid frequency.
pub fn symbol_on_grid(sym: &SymbolSpec, t: f64, grid: &GridSpec) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let v = sym.eval(t, &grid.frequency(idx));
        if v.re.is_nan() || v.im.is_nan() {
            return Err(Error::SymbolDomain(format!(
                "symbol is NaN at ξ = {:?}, t = {t}",
                grid.frequency(idx)
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// `F⁻¹(m · F f)` for precomputed multiplier values, applied per component.
pub fn apply_multiplier_values(field: &Field, mult: &[Complex64]) -> Result<Field> {
    if mult.len() != field.grid.len() {
        return Err(Error::Shape("multiplier length does not match the grid".into()));
    }
    let mut out = forward_transform(field)?;
    for c in 0..out.m {
        for (v, m) in out.component_mut(c).iter_mut().zip(mult) {
            *v *= m;
        }
    }
    inverse_transform(&out)
}

/// `L_ψ(t) f = F⁻¹(ψ(t, ·) F f)`.
pub fn apply_pseudo_diff(sym: &SymbolSpec, t: f64, field: &Field) -> Result<Field> {
    let mult = symbol_on_grid(sym, t, &field.grid)?;
    apply_multiplier_values(field, &mult)
}

/// Values of `(1 + φ(ξ))^{α/2}` on the grid.
pub fn bessel_multiplier(phi: &SymbolSpec, alpha: f64, grid: &GridSpec) -> Result<Vec<Complex64>> {
    Ok(symbol_on_grid(phi, 0.0, grid)?
        .into_iter()
        .map(|v| (Complex64::new(1.0, 0.0) + v).powf(alpha / 2.0))
        .collect())
}

/// `(1 + L_φ)^{α/2} f`.
pub fn bessel_lift(phi: &SymbolSpec, alpha: f64, field: &Field) -> Result<Field> {
    let mult = bessel_multiplier(phi, alpha, &field.grid)?;
    apply_multiplier_values(field, &mult)
}

/// `‖(1 + L_φ)^{α/2} f‖_{L^p}`.
pub fn bessel_norm(field: &Field, phi: &SymbolSpec, alpha: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::Invalid(format!("Bessel norm needs p > 1, got {p}")));
    }
    Ok(bessel_lift(phi, alpha, field)?.lp_norm(p))
}

/// `L_φ^β f` with multiplier `φ(ξ)^β`, where `0^0 = 1`.
pub fn fractional_power(phi: &SymbolSpec, beta: f64, field: &Field) -> Result<Field> {
    let mult: Vec<Complex64> = symbol_on_grid(phi, 0.0, &field.grid)?
        .into_iter()
        .map(|v| if beta == 0.0 { Complex64::new(1.0, 0.0) } else { v.powf(beta) })
        .collect();
    apply_multiplier_values(field, &mult)
}

fn simpson_intervals(t: f64, s: f64, dt_quad: Option<f64>) -> usize {
    match dt_quad {
        None => DEFAULT_SIMPSON_INTERVALS,
        Some(dt) => {
            let k = ((t - s) / dt).ceil().max(2.0) as usize;
            k + (k % 2)
        }
    }
}

/// `∫_s^t ψ(r, ξ) dr`: exact for time-independent symbols, composite Simpson
/// otherwise.
pub fn time_integral(psi: &SymbolSpec, t: f64, s: f64, xi: &[f64], dt_quad: Option<f64>) -> Complex64 {
    if t == s {
        return Complex64::new(0.0, 0.0);
    }
    if !psi.time_dependent {
        return psi.eval(s, xi) * (t - s);
    }
    let k = simpson_intervals(t, s, dt_quad);
    let h = (t - s) / k as f64;
    let mut acc = psi.eval(s, xi) + psi.eval(t, xi);
    for i in 1..k {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += psi.eval(s + i as f64 * h, xi) * w;
    }
    acc * (h / 3.0)
}

/// Multiplier `exp(∫_s^t ψ(r, ξ) dr)` of `T_ψ(t, s)` at every grid frequency.
pub fn evolution_multipliers(psi: &SymbolSpec, t: f64, s: f64, grid: &GridSpec) -> Result<Vec<Complex64>> {
    if t < s {
        return Err(Error::Ordering(format!("evolution needs t >= s, got t = {t}, s = {s}")));
    }
    let mut out = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let v = time_integral(psi, t, s, &grid.frequency(idx), grid.dt_quad).exp();
        if v.re.is_nan() || v.im.is_nan() {
            return Err(Error::SymbolDomain(format!("evolution multiplier is NaN at mode {idx}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// `T_ψ(t, s) f`.
pub fn evolution_apply(psi: &SymbolSpec, t: f64, s: f64, field: &Field) -> Result<Field> {
    if t < s {
        return Err(Error::Ordering(format!("evolution needs t >= s, got t = {t}, s = {s}")));
    }
    if t == s {
        return Ok(field.clone());
    }
    let mult = evolution_multipliers(psi, t, s, &field.grid)?;
    apply_multiplier_values(field, &mult)
}

/// Continuous-normalised inverse transform of multiplier values:
/// `x ↦ L^{-d} Σ_k m(ξ_k) e^{iξ_k·x}`, so the Riemann integral equals `m(0)`.
pub fn kernel_from_multiplier(grid: &GridSpec, mult: &[Complex64]) -> Result<Field> {
    if mult.len() != grid.len() {
        return Err(Error::Shape("multiplier length does not match the grid".into()));
    }
    let mut data = mult.to_vec();
    fft_inverse(grid, &mut data);
    let scale = (grid.len() as f64).sqrt() / grid.l.powi(grid.d as i32);
    for v in data.iter_mut() {
        *v *= scale;
    }
    Field::new(grid, 1, data)
}

/// Kernel `p_ψ(t, s, ·) = F⁻¹ exp(∫_s^t ψ dr)`.
pub fn kernel_p_psi(psi: &SymbolSpec, t: f64, s: f64, grid: &GridSpec) -> Result<Field> {
    if t <= s {
        return Err(Error::Ordering(format!("kernel needs t > s, got t = {t}, s = {s}")));
    }
    let mult = evolution_multipliers(psi, t, s, grid)?;
    kernel_from_multiplier(grid, &mult)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::SymbolSpec;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> GridSpec {
        GridSpec::new(1, n, 2.0 * PI).unwrap()
    }

    fn random_field(grid: &GridSpec, m: usize, seed: u64) -> Field {
        let mut rng = crate::rng::substream(seed, 99, 0);
        let values = (0..m * grid.len())
            .map(|_| Complex64::new(crate::rng::normal(&mut rng), crate::rng::normal(&mut rng)))
            .collect();
        Field::new(grid, m, values).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1, 6, 1.0).is_err());
        assert!(GridSpec::new(1, 2, 1.0).is_err());
        assert!(GridSpec::new(2, 8, -1.0).is_err());
        let g = GridSpec::new(2, 8, 4.0).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.wavenumber(4), -4);
        assert_eq!(g.wavenumber(3), 3);
    }

    #[test]
    fn delta_has_constant_spectrum() {
        let g = GridSpec::new(2, 8, 1.0).unwrap();
        let mut f = Field::zeros(&g, 1);
        f.values[0] = Complex64::new(1.0, 0.0);
        let s = forward_transform(&f).unwrap();
        let c = 1.0 / 8.0;
        assert!(s.values.iter().all(|v| (v - Complex64::new(c, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn plane_wave_is_single_mode() {
        let g = GridSpec::new(1, 16, 3.0).unwrap();
        let f = Field::from_fn(&g, 1, |_, x| Complex64::new(0.0, 2.0 * PI * x[0] / 3.0).exp());
        let s = forward_transform(&f).unwrap();
        for (idx, v) in s.values.iter().enumerate() {
            if idx == 1 {
                assert!((v.norm() - 4.0).abs() < 1e-12);
            } else {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = GridSpec::new(2, 16, 5.0).unwrap();
        let f = random_field(&g, 3, 1);
        let s = forward_transform(&f).unwrap();
        assert!((s.l2_discrete() - f.l2_discrete()).abs() <= 1e-12 * f.l2_discrete());
        let back = inverse_transform(&s).unwrap();
        let err = back.sub(&f).unwrap().l2_discrete() / f.l2_discrete();
        assert!(err < 1e-12, "round trip error {err}");
    }

    #[test]
    fn real_fields_have_conjugate_symmetric_spectra() {
        let g = GridSpec::new(2, 8, 2.0).unwrap();
        let f = Field::from_real(&g, 2, |c, x| (x[0] + c as f64).sin() * (-x[1] * x[1]).exp());
        assert!(is_conjugate_symmetric(&forward_transform(&f).unwrap(), 1e-10));
    }

    #[test]
    fn laplacian_symbol_examples() {
        let g = grid1(32);
        let lap = SymbolSpec::power(2.0, 1);
        let wave = Field::from_fn(&g, 1, |_, x| Complex64::new(0.0, x[0]).exp());
        let out = apply_pseudo_diff(&lap, 0.0, &wave).unwrap();
        assert!(out.sub(&wave).unwrap().max_abs() < 1e-12);

        let constant = Field::from_real(&g, 1, |_, _| 3.0);
        assert!(apply_pseudo_diff(&lap, 0.0, &constant).unwrap().max_abs() < 1e-12);

        let s2 = Field::from_real(&g, 1, |_, x| (2.0 * x[0]).sin());
        let out = apply_pseudo_diff(&lap, 0.0, &s2).unwrap();
        assert!(out.sub(&s2.scaled(4.0)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn bessel_lift_inverts_and_reduces_to_lp() {
        let g = GridSpec::new(1, 64, 20.0).unwrap();
        let phi = SymbolSpec::power(2.0, 1);
        let f = Field::from_real(&g, 2, |c, x| (-(x[0] - c as f64).powi(2)).exp());
        let back = bessel_lift(&phi, 1.5, &bessel_lift(&phi, -1.5, &f).unwrap()).unwrap();
        assert!(back.sub(&f).unwrap().max_abs() < 1e-10);
        let n0 = bessel_norm(&f, &phi, 0.0, 3.0).unwrap();
        assert!((n0 - f.lp_norm(3.0)).abs() < 1e-12 * n0);
        assert!(bessel_norm(&f, &phi, 1.0, 1.0).is_err());
    }

    #[test]
    fn evolution_examples() {
        let g = grid1(32);
        let heat = SymbolSpec::neg_power(2.0, 1.0, 1);
        let f = random_field(&g, 1, 2);
        let same = evolution_apply(&heat, 0.3, 0.3, &f).unwrap();
        assert_eq!(same, f);
        assert!(matches!(evolution_apply(&heat, 0.1, 0.3, &f), Err(Error::Ordering(_))));

        let k = 3.0;
        let wave = Field::from_fn(&g, 1, |_, x| Complex64::new(0.0, k * x[0]).exp());
        let out = evolution_apply(&heat, 0.7, 0.2, &wave).unwrap();
        let expected = wave.scaled((-0.5 * k * k).exp());
        assert!(out.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn evolution_composition_time_independent() {
        let g = GridSpec::new(2, 16, 6.0).unwrap();
        let psi = SymbolSpec::neg_power(1.5, 1.0, 2);
        let f = random_field(&g, 2, 3);
        let two = evolution_apply(&psi, 0.9, 0.4, &evolution_apply(&psi, 0.4, 0.1, &f).unwrap()).unwrap();
        let one = evolution_apply(&psi, 0.9, 0.1, &f).unwrap();
        assert!(two.sub(&one).unwrap().l2_discrete() / f.l2_discrete() <= 1e-12);
    }

    #[test]
    fn evolution_contracts_l2() {
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let psi = SymbolSpec::heat_time_varying(1);
        let f = random_field(&g, 1, 4);
        let out = evolution_apply(&psi, 1.3, 0.2, &f).unwrap();
        assert!(out.l2_discrete() <= f.l2_discrete());
    }

    #[test]
    fn heat_kernel_mass_and_monotone_peak() {
        let g = GridSpec::new(1, 256, 40.0).unwrap();
        let heat = SymbolSpec::neg_power(2.0, 1.0, 1);
        let mut last = f64::INFINITY;
        for tau in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let p = kernel_p_psi(&heat, tau, 0.0, &g).unwrap();
            assert!(p.max_abs_imag() <= 1e-10);
            let mass: f64 = p.values.iter().map(|v| v.re).sum::<f64>() * g.cell_volume();
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
            let peak = p.max_abs();
            assert!(peak < last);
            last = peak;
        }
        assert!(kernel_p_psi(&heat, 0.5, 0.5, &g).is_err());
    }

    #[test]
    fn stable_kernel_is_positive_bump_with_unit_mass() {
        let g = GridSpec::new(1, 512, 80.0).unwrap();
        let psi = SymbolSpec::neg_power(1.5, 1.0, 1);
        let p = kernel_p_psi(&psi, 1.0, 0.0, &g).unwrap();
        let mass: f64 = p.values.iter().map(|v| v.re).sum::<f64>() * g.cell_volume();
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        assert!(p.values[0].re > 0.0);
        assert!(p.values[0].re >= p.values[10].re);
    }
}
