//! Monte Carlo estimators of the variational objective, its score-function
//! gradient, and its Hessian in both dense and diagonal-plus-rank-S form.
//!
//! All estimators draw from an explicit `Stream`; the `EstimatorConfig`
//! entry points seed a fresh stream per call so repeated calls with the same
//! seed reproduce bit-identical results. The structured and dense Hessian
//! estimators are two renderings of one estimator: the dense form is the
//! densified structured form, so the two agree exactly on shared streams.
//!
//! A note on the rank-one weights: folding the per-sample log-joint into the
//! outer-product directions via a square root would go imaginary whenever the
//! log-joint is negative (the usual case). The correction is therefore stored
//! as `sum_i w_i u_i u_i^T` with the signed scalar weight `w_i = l_i / S` and
//! the unscaled score direction `u_i`, which is the same matrix for every
//! sign pattern.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::family::{self, FamilyDescriptor, VariationalParams};
use crate::la::{BlockDiag, DenseMatrix};
use crate::model::LogJointModel;
use crate::rng::Stream;

/// Dense Hessian estimates refuse to materialize above this parameter
/// dimension; use the structured form instead.
pub const DENSE_DIM_GUARD: usize = 2000;

/// Sample counts and the seed for one estimator invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    /// Monte Carlo sample count for gradient and objective estimates.
    pub grad_samples: usize,
    /// Monte Carlo sample count for Hessian estimates.
    pub hess_samples: usize,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(grad_samples: usize, hess_samples: usize, seed: u64) -> Result<Self> {
        if grad_samples == 0 {
            return Err(Error::InvalidConfig {
                what: "grad_samples must be at least 1",
            });
        }
        if hess_samples == 0 {
            return Err(Error::InvalidConfig {
                what: "hess_samples must be at least 1",
            });
        }
        Ok(EstimatorConfig {
            grad_samples,
            hess_samples,
            seed,
        })
    }

    pub fn stream(&self) -> Stream {
        Stream::seed_from_u64(self.seed)
    }
}

/// Monte Carlo gradient estimate with per-sample diagnostics retained.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    /// Log-joint at each of the sampled latent points, in draw order.
    pub per_sample_log_joint: Vec<f64>,
}

impl GradientEstimate {
    pub fn sample_count(&self) -> usize {
        self.per_sample_log_joint.len()
    }
}

/// One signed rank-one term `weight * direction * direction^T`.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub weight: f64,
    pub direction: Vec<f64>,
}

/// Hessian estimate in diagonal-plus-rank-S form: a block-diagonal part (the
/// averaged score-Hessian-times-log-joint plus the entropy Hessian) and S
/// signed rank-one corrections built from score directions.
#[derive(Debug, Clone)]
pub struct StructuredHessian {
    diag: BlockDiag,
    rank_terms: Vec<RankOne>,
}

impl StructuredHessian {
    pub fn new(diag: BlockDiag, rank_terms: Vec<RankOne>) -> Result<Self> {
        let dim = diag.dim();
        for t in &rank_terms {
            if t.direction.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.direction.len(),
                });
            }
        }
        Ok(StructuredHessian { diag, rank_terms })
    }

    pub fn diag(&self) -> &BlockDiag {
        &self.diag
    }

    pub fn rank_terms(&self) -> &[RankOne] {
        &self.rank_terms
    }

    /// Certified upper bound on the largest eigenvalue: blockwise Gershgorin
    /// for the diagonal part plus the rank-one term norms. Cheap (O(S d)) and
    /// never below the true value, which the damping escalation relies on.
    pub fn eig_upper_bound(&self) -> f64 {
        let mut bound = 0.0f64;
        for block in self.diag.blocks() {
            for i in 0..block.rows() {
                let row_sum: f64 = (0..block.cols())
                    .map(|j| crate::math::abs(block.get(i, j)))
                    .sum();
                bound = bound.max(row_sum);
            }
        }
        for t in &self.rank_terms {
            bound += crate::math::abs(t.weight) * crate::la::dot(&t.direction, &t.direction);
        }
        bound
    }

    /// Structurally negated copy: blocks and weights flip sign, so the
    /// densification is the negated matrix.
    pub fn negated(&self) -> StructuredHessian {
        let mut diag = self.diag.clone();
        diag.scale(-1.0);
        let rank_terms = self
            .rank_terms
            .iter()
            .map(|t| RankOne {
                weight: -t.weight,
                direction: t.direction.clone(),
            })
            .collect();
        StructuredHessian { diag, rank_terms }
    }
}

/// One per-sample Hessian draw in factored form: the log-joint-scaled score
/// direction as a rank-one term, and the block-diagonal part
/// `score_hessian * log_joint + entropy_hessian`. The deterministic entropy
/// Hessian rides along in every draw so the draw mean is the full objective
/// Hessian; for the Gaussian family that term is zero, so this costs nothing.
#[derive(Debug, Clone)]
pub struct PerSampleCurvature {
    log_joint: f64,
    direction: Vec<f64>,
    diag: BlockDiag,
}

impl PerSampleCurvature {
    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn diag(&self) -> &BlockDiag {
        &self.diag
    }
}

/// Linear operators with diagonal-plus-low-rank structure: apply in O(S d)
/// without forming any d x d intermediate, and densify for oracles.
pub trait Curvature {
    fn dim(&self) -> usize;

    /// `out = H v`.
    fn matvec_into(&self, v: &[f64], out: &mut [f64]);

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.matvec_into(v, &mut out);
        out
    }

    fn densify(&self) -> DenseMatrix;
}

/// Accumulate `weight * u u^T` into `m`, writing each symmetric pair from one
/// computed product so the result stays bitwise symmetric.
fn add_rank_one_into(m: &mut DenseMatrix, weight: f64, u: &[f64]) {
    let d = u.len();
    for i in 0..d {
        for j in i..d {
            let t = weight * (u[i] * u[j]);
            m.add_to(i, j, t);
            if i != j {
                m.add_to(j, i, t);
            }
        }
    }
}

impl Curvature for StructuredHessian {
    fn dim(&self) -> usize {
        self.diag.dim()
    }

    fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        self.diag.matvec_into(v, out);
        for t in &self.rank_terms {
            let proj = crate::la::dot(&t.direction, v);
            crate::la::axpy(t.weight * proj, &t.direction, out);
        }
    }

    fn densify(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim(), self.dim());
        self.diag.add_densified_into(&mut m);
        for t in &self.rank_terms {
            add_rank_one_into(&mut m, t.weight, &t.direction);
        }
        m
    }
}

impl Curvature for PerSampleCurvature {
    fn dim(&self) -> usize {
        self.diag.dim()
    }

    fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        self.diag.matvec_into(v, out);
        let proj = crate::la::dot(&self.direction, v);
        crate::la::axpy(self.log_joint * proj, &self.direction, out);
    }

    fn densify(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim(), self.dim());
        self.diag.add_densified_into(&mut m);
        add_rank_one_into(&mut m, self.log_joint, &self.direction);
        m
    }
}

impl Curvature for DenseMatrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        DenseMatrix::matvec_into(self, v, out)
    }

    fn densify(&self) -> DenseMatrix {
        self.clone()
    }
}

/// Structure-exploiting matrix-vector product: block-diagonal action plus the
/// rank-one projections, O(S d) at fixed block size.
pub fn structured_matvec<C: Curvature>(h: &C, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: v.len(),
        });
    }
    Ok(h.matvec(v))
}

fn check_dims(model: &LogJointModel, family: &FamilyDescriptor) -> Result<()> {
    if model.latent_dim() != family.factor_count() {
        return Err(Error::DimensionMismatch {
            expected: model.latent_dim(),
            got: family.factor_count(),
        });
    }
    Ok(())
}

fn finite_log_joint(model: &LogJointModel, theta: &[f64]) -> Result<f64> {
    let lj = model.log_joint(theta);
    if !lj.is_finite() {
        return Err(Error::NonFiniteLogJoint {
            value: lj,
            sample: theta.to_vec(),
        });
    }
    Ok(lj)
}

/// Monte Carlo objective estimate: mean sampled log-joint plus exact entropy.
pub fn estimate_elbo(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let mut stream = cfg.stream();
    estimate_elbo_with(model, family, params, cfg.grad_samples, &mut stream)
}

pub fn estimate_elbo_with(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    samples: usize,
    stream: &mut Stream,
) -> Result<f64> {
    check_dims(model, family)?;
    if samples == 0 {
        return Err(Error::EmptySampleRequest);
    }
    let d = family.factor_count();
    let mut theta = vec![0.0; d];
    let mut acc = 0.0;
    for _ in 0..samples {
        family::sample_into(family, params, stream, &mut theta);
        acc += finite_log_joint(model, &theta)?;
    }
    Ok(acc / samples as f64 + family::entropy(family, params)?)
}

/// Score-function gradient estimate:
/// `(1/T) sum_i score(theta_i) * log_joint(theta_i) + entropy_grad`.
pub fn estimate_gradient(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    cfg: &EstimatorConfig,
) -> Result<GradientEstimate> {
    let mut stream = cfg.stream();
    estimate_gradient_with(model, family, params, cfg.grad_samples, &mut stream)
}

pub fn estimate_gradient_with(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    samples: usize,
    stream: &mut Stream,
) -> Result<GradientEstimate> {
    check_dims(model, family)?;
    if samples == 0 {
        return Err(Error::EmptySampleRequest);
    }
    let d = family.factor_count();
    let p = family.param_dim();
    let mut theta = vec![0.0; d];
    let mut score = vec![0.0; p];
    let mut acc = vec![0.0; p];
    let mut per_sample = Vec::with_capacity(samples);
    for _ in 0..samples {
        family::sample_into(family, params, stream, &mut theta);
        let lj = finite_log_joint(model, &theta)?;
        family::score_into(family, params, &theta, &mut score);
        crate::la::axpy(lj, &score, &mut acc);
        per_sample.push(lj);
    }
    let scale = 1.0 / samples as f64;
    for v in &mut acc {
        *v *= scale;
    }
    let entropy_grad = family::entropy_grad(family, params)?;
    for (a, g) in acc.iter_mut().zip(entropy_grad.iter()) {
        *a += g;
    }
    Ok(GradientEstimate {
        value: acc,
        per_sample_log_joint: per_sample,
    })
}

/// One per-sample Hessian draw in factored form. The draw order is: one
/// latent sample, then its log-joint and score; estimators that need several
/// draws call this in a loop on one stream.
pub fn sample_curvature(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    stream: &mut Stream,
) -> Result<PerSampleCurvature> {
    check_dims(model, family)?;
    let d = family.factor_count();
    let mut theta = vec![0.0; d];
    family::sample_into(family, params, stream, &mut theta);
    let lj = finite_log_joint(model, &theta)?;
    let mut direction = vec![0.0; family.param_dim()];
    family::score_into(family, params, &theta, &mut direction);
    let sample = family::ParamSample::from_vec(theta)?;
    let mut diag = family::score_hessian_blocks(family, params, &sample)?;
    diag.scale(lj);
    diag.add_assign(&family::entropy_hessian_blocks(family, params)?)?;
    Ok(PerSampleCurvature {
        log_joint: lj,
        direction,
        diag,
    })
}

/// Structured Hessian estimate: the mean of S per-sample draws, stored as a
/// block-diagonal part plus S signed rank-one terms with weights `l_i / S`.
pub fn estimate_hessian_structured(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    cfg: &EstimatorConfig,
) -> Result<StructuredHessian> {
    let mut stream = cfg.stream();
    estimate_hessian_structured_with(model, family, params, cfg.hess_samples, &mut stream)
}

pub fn estimate_hessian_structured_with(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    samples: usize,
    stream: &mut Stream,
) -> Result<StructuredHessian> {
    check_dims(model, family)?;
    if samples == 0 {
        return Err(Error::EmptySampleRequest);
    }
    let mut diag = BlockDiag::zeros(&family.block_sizes());
    let mut rank_terms = Vec::with_capacity(samples);
    let scale = 1.0 / samples as f64;
    for _ in 0..samples {
        let draw = sample_curvature(model, family, params, stream)?;
        diag.add_assign(&draw.diag)?;
        rank_terms.push(RankOne {
            weight: draw.log_joint * scale,
            direction: draw.direction,
        });
    }
    diag.scale(scale);
    Ok(StructuredHessian { diag, rank_terms })
}

/// Dense Hessian estimate: the densified structured estimate, symmetrized.
/// Refuses dimensions above `DENSE_DIM_GUARD`.
pub fn estimate_hessian_dense(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    cfg: &EstimatorConfig,
) -> Result<DenseMatrix> {
    let mut stream = cfg.stream();
    estimate_hessian_dense_with(model, family, params, cfg.hess_samples, &mut stream)
}

pub fn estimate_hessian_dense_with(
    model: &LogJointModel,
    family: &FamilyDescriptor,
    params: &VariationalParams,
    samples: usize,
    stream: &mut Stream,
) -> Result<DenseMatrix> {
    let p = family.param_dim();
    if p > DENSE_DIM_GUARD {
        return Err(Error::DenseGuardExceeded {
            dim: p,
            guard: DENSE_DIM_GUARD,
        });
    }
    let structured = estimate_hessian_structured_with(model, family, params, samples, stream)?;
    let mut dense = structured.densify();
    dense.symmetrize();
    Ok(dense)
}
