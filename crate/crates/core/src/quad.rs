//! One-dimensional quadrature used as an independent oracle for the Monte
//! Carlo estimators and for model evidence checks.
//!
//! Composite Simpson on a wide fixed window is accurate far beyond the
//! tolerances asked of it here (smooth Gaussian-tailed integrands, O(h^4)
//! error), and trivially deterministic.

use crate::math;

/// Composite Simpson integral of `f` on `[a, b]` with `panels` subintervals
/// (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels } else { panels + 1 }.max(2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Expectation of `f` under a 1-d Gaussian with the given mean and standard
/// deviation, integrated over mean +/- 12 sd.
pub fn gauss_expectation(f: impl Fn(f64) -> f64, mean: f64, sd: f64, panels: usize) -> f64 {
    let a = mean - 12.0 * sd;
    let b = mean + 12.0 * sd;
    simpson(
        |t| {
            let z = (t - mean) / sd;
            let density = math::exp(-0.5 * z * z) / (sd * math::sqrt(2.0 * core::f64::consts::PI));
            density * f(t)
        },
        a,
        b,
        panels,
    )
}

/// `ln of the integral of exp(h)` over `[a, b]`, computed with a max shift so the
/// exponentials stay in range.
pub fn log_integral_exp(h: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2);
    let mut peak = f64::NEG_INFINITY;
    for i in 0..=n {
        let x = a + (b - a) * i as f64 / n as f64;
        peak = peak.max(h(x));
    }
    let integral = simpson(|x| math::exp(h(x) - peak), a, b, panels);
    math::ln(integral) + peak
}

/// Exact-entropy ELBO of a 1-d Gaussian `q(. ; mean, sd)` against the given
/// log-joint: `E_q[log p] + H(q)` by quadrature.
pub fn elbo_quadrature_1d(
    log_joint: impl Fn(f64) -> f64,
    mean: f64,
    sd: f64,
    panels: usize,
) -> f64 {
    let entropy = math::ln(sd) + 0.5 * (math::LN_2PI + 1.0);
    gauss_expectation(log_joint, mean, sd, panels) + entropy
}
