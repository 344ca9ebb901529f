//! Sample statistics used by the Monte-Carlo checks.

use serde::Serialize;

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub se_var: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    let n = x.len();
    if n == 0 {
        return Moments { n, mean: f64::NAN, var: f64::NAN, se_mean: f64::NAN, se_var: f64::NAN };
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
    let m2n = m2 / nf;
    let m4n = m4 / nf;
    let se_mean = (var / nf).sqrt();
    let se_var = ((m4n - m2n * m2n).max(0.0) / nf).sqrt();
    Moments { n, mean, var, se_mean, se_var }
}

/// Sample mean of `x` and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let m = moments(x);
    (m.mean, m.se_mean)
}

/// `|a - b| / sqrt(se_a² + se_b²)`, or 0 when both sides are exact and equal.
pub fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let se = (se_a * se_a + se_b * se_b).sqrt();
    let diff = (a - b).abs();
    if se == 0.0 {
        if diff <= 1e-12 * a.abs().max(b.abs()).max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Largest relative change between consecutive entries.
pub fn max_relative_drift(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| {
            if w[0] == w[1] {
                0.0
            } else {
                (w[1] - w[0]).abs() / w[0].abs()
            }
        })
        .fold(0.0, f64::max)
}

/// `(max - min) / min` over a list of positive constants.
pub fn relative_spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}
