//! Factorized variational families.
//!
//! A family describes `q(theta | params) = prod_i q_i(theta_i | block_i)` and
//! supplies sampling, log-density, the score `d log q / d params`, the
//! block-diagonal score Hessian, and the entropy with its first two
//! derivatives. v1 ships a single factor kind: Gaussian with mean/log-scale
//! blocks `(mu_i, rho_i)`, standard deviation `sigma_i = exp(rho_i)`.
//!
//! The log-scale parametrization keeps the parameter vector unconstrained
//! (no positivity projection in the optimizers) and makes the entropy Hessian
//! exactly zero.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::la::{BlockDiag, DenseMatrix};
use crate::math;
use crate::rng::Stream;

/// log-scale values are clamped to this magnitude inside density/score
/// evaluation so `exp(-2 rho)` cannot overflow downstream arithmetic.
pub const LOG_SCALE_CLAMP: f64 = 20.0;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of log-scale clamp events since the last reset. Clamping is a
/// diagnostic condition, not an error.
pub fn clamp_event_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub fn reset_clamp_events() {
    CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

#[inline]
fn clamped_rho(rho: f64) -> f64 {
    if rho > LOG_SCALE_CLAMP {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        LOG_SCALE_CLAMP
    } else if rho < -LOG_SCALE_CLAMP {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        -LOG_SCALE_CLAMP
    } else {
        rho
    }
}

/// Per-factor family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Gaussian with parameter block `(mean, log-scale)`.
    GaussianMeanLogScale,
}

impl FactorKind {
    pub fn block_size(self) -> usize {
        match self {
            FactorKind::GaussianMeanLogScale => 2,
        }
    }
}

/// Shape of a factorized variational family: which factor each latent
/// coordinate gets and how the flat parameter vector partitions into blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyDescriptor {
    factors: Vec<FactorKind>,
    offsets: Vec<usize>,
    param_dim: usize,
}

impl FamilyDescriptor {
    pub fn new(factors: Vec<FactorKind>) -> Self {
        let mut offsets = Vec::with_capacity(factors.len());
        let mut dim = 0;
        for f in &factors {
            offsets.push(dim);
            dim += f.block_size();
        }
        FamilyDescriptor {
            factors,
            offsets,
            param_dim: dim,
        }
    }

    /// Mean-field Gaussian over `latent_dim` coordinates.
    pub fn gaussian_mean_field(latent_dim: usize) -> Self {
        Self::new(vec![FactorKind::GaussianMeanLogScale; latent_dim])
    }

    /// Number of latent coordinates (factors).
    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, i: usize) -> FactorKind {
        self.factors[i]
    }

    /// Total parameter dimension: sum of block sizes.
    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn block_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.block_size()).collect()
    }

    fn check_params(&self, params: &VariationalParams) -> Result<()> {
        if params.values.len() != self.param_dim {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim,
                got: params.values.len(),
            });
        }
        Ok(())
    }

    fn check_sample(&self, theta: &ParamSample) -> Result<()> {
        if theta.values.len() != self.factor_count() {
            return Err(Error::DimensionMismatch {
                expected: self.factor_count(),
                got: theta.values.len(),
            });
        }
        Ok(())
    }
}

/// Flat variational parameter vector, partitioned into per-factor blocks by
/// the owning `FamilyDescriptor`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    values: Vec<f64>,
}

impl VariationalParams {
    /// Validates length against the family and finiteness of every entry.
    pub fn new(family: &FamilyDescriptor, values: Vec<f64>) -> Result<Self> {
        if values.len() != family.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: family.param_dim(),
                got: values.len(),
            });
        }
        Self::from_vec(values)
    }

    /// Finiteness-checked constructor without a family (the block layout is
    /// validated at each family operation).
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: i });
            }
        }
        Ok(VariationalParams { values })
    }

    /// Every Gaussian block initialized to `(mean, log_scale)`.
    pub fn constant_gaussian(family: &FamilyDescriptor, mean: f64, log_scale: f64) -> Self {
        let mut values = Vec::with_capacity(family.param_dim());
        for _ in 0..family.factor_count() {
            values.push(mean);
            values.push(log_scale);
        }
        VariationalParams { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One draw from the variational distribution: a latent vector of length
/// `factor_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSample {
    values: Vec<f64>,
}

impl ParamSample {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: i });
            }
        }
        Ok(ParamSample { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[inline]
fn gaussian_block(params: &VariationalParams, offset: usize) -> (f64, f64) {
    (params.values[offset], params.values[offset + 1])
}

/// Draw one latent vector into `out` (length `factor_count`), consuming one
/// normal variate per coordinate in factor order.
pub(crate) fn sample_into(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    stream: &mut Stream,
    out: &mut [f64],
) {
    for i in 0..family.factor_count() {
        let (mu, rho) = gaussian_block(params, family.block_offset(i));
        let sigma = math::exp(clamped_rho(rho));
        out[i] = mu + sigma * stream.normal();
    }
}

/// `n` independent draws from `q(. | params)`, deterministic given the stream
/// state and draw order.
pub fn sample(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    stream: &mut Stream,
    n: usize,
) -> Result<Vec<ParamSample>> {
    family.check_params(params)?;
    if n == 0 {
        return Err(Error::EmptySampleRequest);
    }
    let d = family.factor_count();
    let mut draws = Vec::with_capacity(n);
    let mut buf = vec![0.0; d];
    for _ in 0..n {
        sample_into(family, params, stream, &mut buf);
        draws.push(ParamSample {
            values: buf.clone(),
        });
    }
    Ok(draws)
}

/// `log q(theta | params) = sum_i log q_i(theta_i | block_i)`.
///
/// Gaussian factor: `-ln(2 pi)/2 - rho_i - (theta_i - mu_i)^2 exp(-2 rho_i)/2`.
pub fn log_density(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    theta: &ParamSample,
) -> Result<f64> {
    family.check_params(params)?;
    family.check_sample(theta)?;
    let mut acc = 0.0;
    for i in 0..family.factor_count() {
        let (mu, rho) = gaussian_block(params, family.block_offset(i));
        let rho = clamped_rho(rho);
        let diff = theta.values[i] - mu;
        acc += -0.5 * math::LN_2PI - rho - 0.5 * diff * diff * math::exp(-2.0 * rho);
    }
    Ok(acc)
}

/// Gradient of `log q(theta | .)` with respect to the parameter vector at
/// fixed `theta`.
///
/// Gaussian block: `d/dmu = (theta - mu) exp(-2 rho)`,
/// `d/drho = (theta - mu)^2 exp(-2 rho) - 1`.
pub fn score(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    theta: &ParamSample,
) -> Result<Vec<f64>> {
    family.check_params(params)?;
    family.check_sample(theta)?;
    let mut out = vec![0.0; family.param_dim()];
    score_into(family, params, theta.values(), &mut out);
    Ok(out)
}

pub(crate) fn score_into(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    theta: &[f64],
    out: &mut [f64],
) {
    for i in 0..family.factor_count() {
        let off = family.block_offset(i);
        let (mu, rho) = gaussian_block(params, off);
        let rho = clamped_rho(rho);
        let inv_var = math::exp(-2.0 * rho);
        let diff = theta[i] - mu;
        out[off] = diff * inv_var;
        out[off + 1] = diff * diff * inv_var - 1.0;
    }
}

/// Block-diagonal Hessian of `log q(theta | .)` in the parameters; only the
/// diagonal blocks exist, cross-block second derivatives vanish by
/// factorization.
///
/// Gaussian block:
/// `[[-e, -2 d e], [-2 d e, -2 d^2 e]]` with `e = exp(-2 rho)`, `d = theta - mu`.
pub fn score_hessian_blocks(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    theta: &ParamSample,
) -> Result<BlockDiag> {
    family.check_params(params)?;
    family.check_sample(theta)?;
    let mut blocks = Vec::with_capacity(family.factor_count());
    for i in 0..family.factor_count() {
        let (mu, rho) = gaussian_block(params, family.block_offset(i));
        let rho = clamped_rho(rho);
        let e = math::exp(-2.0 * rho);
        let d = theta.values[i] - mu;
        let off_diag = -2.0 * d * e;
        let mut b = DenseMatrix::zeros(2, 2);
        b.set(0, 0, -e);
        b.set(0, 1, off_diag);
        b.set(1, 0, off_diag);
        b.set(1, 1, -2.0 * d * d * e);
        blocks.push(b);
    }
    BlockDiag::new(blocks)
}

/// Exact entropy `H(q) = sum_i (rho_i + ln(2 pi e)/2)`; never sampled.
pub fn entropy(family: &FamilyDescriptor, params: &VariationalParams) -> Result<f64> {
    family.check_params(params)?;
    let half_ln_2pi_e = 0.5 * (math::LN_2PI + 1.0);
    let mut acc = 0.0;
    for i in 0..family.factor_count() {
        let (_, rho) = gaussian_block(params, family.block_offset(i));
        acc += rho + half_ln_2pi_e;
    }
    Ok(acc)
}

/// Exact entropy gradient; Gaussian blocks contribute `(0, 1)`.
pub fn entropy_grad(family: &FamilyDescriptor, params: &VariationalParams) -> Result<Vec<f64>> {
    family.check_params(params)?;
    let mut out = vec![0.0; family.param_dim()];
    for i in 0..family.factor_count() {
        out[family.block_offset(i) + 1] = 1.0;
    }
    Ok(out)
}

/// Exact entropy Hessian; identically zero for the mean/log-scale Gaussian.
pub fn entropy_hessian_blocks(
    family: &FamilyDescriptor,
    params: &VariationalParams,
) -> Result<BlockDiag> {
    family.check_params(params)?;
    Ok(BlockDiag::zeros(&family.block_sizes()))
}
