//! Transcendental functions routed through `libm`.
//!
//! Using `libm` in both std and no_std builds keeps every computed value
//! bit-identical across the two configurations, which the replayable-trace
//! contract relies on.

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn log1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// ln(2*pi), the recurring Gaussian normalizer.
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
