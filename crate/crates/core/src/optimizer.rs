//! Optimization loops: first-order ascent, dense Newton, the structured
//! second-order scheme with Sherman-Morrison or conjugate-gradient back-ends,
//! and the Neumann-series scheme, with shared step control and convergence
//! criteria.
//!
//! All schemes maximize the variational objective. The second-order updates
//! solve the damped-curvature system `(damping * I - H) y = g` and step
//! `params + step_size * y`, which reduces to the textbook Newton ascent step
//! at zero damping. Damping starts at the configured value and is raised
//! (persistently) when a solver reports indefinite or singular curvature,
//! since Monte Carlo Hessian estimates are routinely indefinite far from the
//! optimum.
//!
//! Steps consume estimates through the [`EstimatorSource`] trait. The Monte
//! Carlo source owns one seeded stream per run and draws in a fixed order
//! (gradient first, then Hessian), so runs replay exactly; the deterministic
//! quadratic source backs the Newton-exactness and timing tests.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::{
    self, Curvature, EstimatorConfig, GradientEstimate, PerSampleCurvature, StructuredHessian,
};
use crate::family::{FamilyDescriptor, VariationalParams};
use crate::la::{self, DenseMatrix};
use crate::linalg::{
    conjugate_gradient, gershgorin_upper, invert_structured, neumann_inverse_apply,
    spectral_norm_estimate, CurvatureOperator, NeumannControl,
};
use crate::model::{exact_kl_to_posterior, LogJointModel};
use crate::rng::Stream;

/// Damping ceiling for the escalation policy.
pub const MAX_DAMPING: f64 = 1e6;

/// The optimization schemes, named as the harness spells them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    FirstOrder,
    DenseNewton,
    Scheme1Sm,
    Scheme1Cg,
    Scheme2,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::FirstOrder,
        Scheme::DenseNewton,
        Scheme::Scheme1Sm,
        Scheme::Scheme1Cg,
        Scheme::Scheme2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::FirstOrder => "first-order",
            Scheme::DenseNewton => "dense-newton",
            Scheme::Scheme1Sm => "scheme1-sm",
            Scheme::Scheme1Cg => "scheme1-cg",
            Scheme::Scheme2 => "scheme2",
        }
    }

    pub fn parse(name: &str) -> Option<Scheme> {
        Scheme::ALL.iter().copied().find(|s| s.name() == name)
    }

    pub fn is_second_order(&self) -> bool {
        !matches!(self, Scheme::FirstOrder)
    }
}

/// Back-end selector for the structured scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOption {
    ShermanMorrison,
    ConjugateGradient,
}

/// Choice of the Neumann scaling constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum C0Choice {
    /// 10x a power-iteration estimate of the pilot Hessian norm, resolved on
    /// the first step.
    Auto,
    Fixed(f64),
}

/// Step sizing and solver knobs shared by all schemes.
#[derive(Debug, Clone)]
pub struct StepControl {
    /// Step size. `None` means 1.0 for the Newton-type schemes and is an
    /// error for the first-order baseline, which has no natural scale.
    pub step_size: Option<f64>,
    /// Initial damping; raised tenfold (from 1.0, or twice the estimated
    /// Hessian norm if larger, when starting at zero) whenever a solver
    /// reports indefinite or singular curvature, up to [`MAX_DAMPING`].
    pub damping: f64,
    pub c0: C0Choice,
    /// Steps longer than this are rescaled to this norm; tames early-phase
    /// stochastic Hessians.
    pub max_step_norm: f64,
    /// Relative residual tolerance for the conjugate-gradient back-end.
    pub cg_tol: f64,
    /// Iteration cap for conjugate gradient; `None` means `2 * dim + 10`.
    pub cg_max_iters: Option<usize>,
    /// Neumann stopping tolerance as a fraction of the gradient norm.
    pub neumann_tol_factor: f64,
    pub neumann_max_steps: usize,
    /// Use the alternative carried-term recursion (see
    /// [`linalg::neumann_inverse_apply`]); comparison only.
    pub literal_neumann: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            step_size: None,
            damping: 0.0,
            c0: C0Choice::Auto,
            max_step_norm: 10.0,
            cg_tol: 1e-8,
            cg_max_iters: None,
            neumann_tol_factor: 1e-6,
            neumann_max_steps: 200,
            literal_neumann: false,
        }
    }
}

/// When to stop iterating. `max_iterations` always applies; the two
/// tolerances can be disabled with `None`.
#[derive(Debug, Clone)]
pub struct ConvergenceCriterion {
    /// Fires when the moving average of the gradient-estimate norm over
    /// `grad_window` steps drops to this value.
    pub grad_norm_tol: Option<f64>,
    pub grad_window: usize,
    /// Fires when a step's parameter change norm drops to this value.
    pub param_tol: Option<f64>,
    pub max_iterations: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        ConvergenceCriterion {
            grad_norm_tol: Some(1e-3),
            grad_window: 5,
            param_tol: Some(1e-8),
            max_iterations: 1000,
        }
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iteration: usize,
    pub elbo_estimate: f64,
    pub grad_norm: f64,
    /// KL to the exact posterior; present only on oracle models.
    pub kl_exact: Option<f64>,
    pub step_norm: f64,
    pub wallclock_ms: f64,
    /// Scheme-specific diagnostics in a fixed per-scheme key order.
    pub diagnostics: Vec<(&'static str, f64)>,
}

/// Monotonic time source injected by the host; the core never reads a clock
/// of its own.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero; traces carry zero wallclock.
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

/// A curvature draw handed to the Neumann inner loop: per-sample in the
/// Monte Carlo source, a fixed matrix in deterministic sources.
#[derive(Debug, Clone)]
pub enum CurvatureDraw {
    PerSample(PerSampleCurvature),
    Matrix(StructuredHessian),
}

impl Curvature for CurvatureDraw {
    fn dim(&self) -> usize {
        match self {
            CurvatureDraw::PerSample(c) => c.dim(),
            CurvatureDraw::Matrix(m) => m.dim(),
        }
    }

    fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            CurvatureDraw::PerSample(c) => c.matvec_into(v, out),
            CurvatureDraw::Matrix(m) => m.matvec_into(v, out),
        }
    }

    fn densify(&self) -> DenseMatrix {
        match self {
            CurvatureDraw::PerSample(c) => c.densify(),
            CurvatureDraw::Matrix(m) => m.densify(),
        }
    }
}

/// Where the steps get their gradient and curvature estimates.
pub trait EstimatorSource {
    fn param_dim(&self) -> usize;
    fn gradient(&mut self, params: &VariationalParams) -> Result<GradientEstimate>;
    fn structured_hessian(&mut self, params: &VariationalParams) -> Result<StructuredHessian>;
    fn dense_hessian(&mut self, params: &VariationalParams) -> Result<DenseMatrix>;
    fn curvature_draw(&mut self, params: &VariationalParams) -> Result<CurvatureDraw>;
    fn elbo(&mut self, params: &VariationalParams) -> Result<f64>;
    fn kl_to_exact(&self, params: &VariationalParams) -> Option<f64>;
}

/// Monte Carlo estimator source: one stream per run, draws in call order.
pub struct McSource<'a> {
    model: &'a LogJointModel,
    family: &'a FamilyDescriptor,
    grad_samples: usize,
    hess_samples: usize,
    elbo_samples: usize,
    stream: Stream,
}

impl<'a> McSource<'a> {
    pub fn new(
        model: &'a LogJointModel,
        family: &'a FamilyDescriptor,
        cfg: &EstimatorConfig,
        elbo_samples: Option<usize>,
    ) -> Result<Self> {
        if model.latent_dim() != family.factor_count() {
            return Err(Error::DimensionMismatch {
                expected: model.latent_dim(),
                got: family.factor_count(),
            });
        }
        let elbo_samples = elbo_samples.unwrap_or(cfg.grad_samples);
        if elbo_samples == 0 {
            return Err(Error::InvalidConfig {
                what: "elbo_samples must be at least 1",
            });
        }
        Ok(McSource {
            model,
            family,
            grad_samples: cfg.grad_samples,
            hess_samples: cfg.hess_samples,
            elbo_samples,
            stream: cfg.stream(),
        })
    }
}

impl EstimatorSource for McSource<'_> {
    fn param_dim(&self) -> usize {
        self.family.param_dim()
    }

    fn gradient(&mut self, params: &VariationalParams) -> Result<GradientEstimate> {
        estimators::estimate_gradient_with(
            self.model,
            self.family,
            params,
            self.grad_samples,
            &mut self.stream,
        )
    }

    fn structured_hessian(&mut self, params: &VariationalParams) -> Result<StructuredHessian> {
        estimators::estimate_hessian_structured_with(
            self.model,
            self.family,
            params,
            self.hess_samples,
            &mut self.stream,
        )
    }

    fn dense_hessian(&mut self, params: &VariationalParams) -> Result<DenseMatrix> {
        estimators::estimate_hessian_dense_with(
            self.model,
            self.family,
            params,
            self.hess_samples,
            &mut self.stream,
        )
    }

    fn curvature_draw(&mut self, params: &VariationalParams) -> Result<CurvatureDraw> {
        Ok(CurvatureDraw::PerSample(estimators::sample_curvature(
            self.model,
            self.family,
            params,
            &mut self.stream,
        )?))
    }

    fn elbo(&mut self, params: &VariationalParams) -> Result<f64> {
        estimators::estimate_elbo_with(
            self.model,
            self.family,
            params,
            self.elbo_samples,
            &mut self.stream,
        )
    }

    fn kl_to_exact(&self, params: &VariationalParams) -> Option<f64> {
        self.model.exact_posterior()?;
        exact_kl_to_posterior(self.family, params, self.model).ok()
    }
}

/// Deterministic quadratic objective `L(x) = (x - x*)^T H (x - x*) / 2` with
/// a constant, exactly known Hessian `H` (negative definite for a maximum at
/// `x*`). Gradient and curvature are exact; nothing is sampled.
pub struct QuadraticSource {
    hessian: StructuredHessian,
    dense: DenseMatrix,
    optimum: Vec<f64>,
}

impl QuadraticSource {
    pub fn new(hessian: StructuredHessian, optimum: Vec<f64>) -> Result<Self> {
        if optimum.len() != hessian.dim() {
            return Err(Error::DimensionMismatch {
                expected: hessian.dim(),
                got: optimum.len(),
            });
        }
        let dense = hessian.densify();
        Ok(QuadraticSource {
            hessian,
            dense,
            optimum,
        })
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let diff = la::sub(x, &self.optimum);
        0.5 * la::dot(&diff, &self.dense.matvec(&diff))
    }
}

impl EstimatorSource for QuadraticSource {
    fn param_dim(&self) -> usize {
        self.hessian.dim()
    }

    fn gradient(&mut self, params: &VariationalParams) -> Result<GradientEstimate> {
        let diff = la::sub(params.values(), &self.optimum);
        Ok(GradientEstimate {
            value: self.hessian.matvec(&diff),
            per_sample_log_joint: Vec::new(),
        })
    }

    fn structured_hessian(&mut self, _params: &VariationalParams) -> Result<StructuredHessian> {
        Ok(self.hessian.clone())
    }

    fn dense_hessian(&mut self, _params: &VariationalParams) -> Result<DenseMatrix> {
        Ok(self.dense.clone())
    }

    fn curvature_draw(&mut self, _params: &VariationalParams) -> Result<CurvatureDraw> {
        Ok(CurvatureDraw::Matrix(self.hessian.clone()))
    }

    fn elbo(&mut self, params: &VariationalParams) -> Result<f64> {
        Ok(self.objective(params.values()))
    }

    fn kl_to_exact(&self, _params: &VariationalParams) -> Option<f64> {
        None
    }
}

/// Result of one accepted step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: VariationalParams,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub diagnostics: Vec<(&'static str, f64)>,
}

fn escalate_damping(current: f64, eig_bound: f64) -> f64 {
    // at least a tenfold raise, and certainly past the largest eigenvalue of
    // the estimate at hand, so a single retry restores definiteness
    (current * 10.0)
        .max(2.0 * eig_bound)
        .max(1.0)
        .min(MAX_DAMPING)
}

fn is_definiteness_error(e: &Error) -> bool {
    matches!(
        e,
        Error::IndefiniteCurvature { .. }
            | Error::NotPositiveDefinite
            | Error::SingularUpdate { .. }
            | Error::SingularBlock { .. }
            | Error::SingularMatrix
    )
}

fn apply_update(
    params: &VariationalParams,
    direction: &[f64],
    step_size: f64,
    max_step_norm: f64,
) -> Result<(VariationalParams, f64)> {
    let mut step = la::scaled(direction, step_size);
    let mut norm = la::norm(&step);
    if !norm.is_finite() {
        return Err(Error::NonFiniteStep);
    }
    if norm > max_step_norm {
        let shrink = max_step_norm / norm;
        for v in &mut step {
            *v *= shrink;
        }
        norm = max_step_norm;
    }
    let mut values = params.values().to_vec();
    for (v, s) in values.iter_mut().zip(step.iter()) {
        *v += s;
    }
    let new_params = VariationalParams::from_vec(values).map_err(|_| Error::NonFiniteStep)?;
    Ok((new_params, norm))
}

/// Plain stochastic gradient ascent: `params + step_size * gradient`.
pub fn step_first_order<S: EstimatorSource>(
    src: &mut S,
    params: &VariationalParams,
    ctl: &StepControl,
) -> Result<StepOutcome> {
    let step_size = ctl.step_size.ok_or(Error::StepSizeRequired)?;
    let grad = src.gradient(params)?;
    let grad_norm = la::norm(&grad.value);
    let (new_params, step_norm) = apply_update(params, &grad.value, step_size, ctl.max_step_norm)?;
    Ok(StepOutcome {
        params: new_params,
        grad_norm,
        step_norm,
        diagnostics: Vec::new(),
    })
}

/// Newton step through the dense estimate: forms `K = damping * I - H`
/// explicitly and solves by Cholesky (which also certifies definiteness).
/// On indefinite or singular curvature the damping escalates once and the
/// step retries; a second failure propagates.
pub fn step_dense_newton<S: EstimatorSource>(
    src: &mut S,
    params: &VariationalParams,
    ctl: &StepControl,
    damping: &mut f64,
) -> Result<StepOutcome> {
    let grad = src.gradient(params)?;
    let hessian = src.dense_hessian(params)?;
    let mut escalated = false;
    let direction = loop {
        let mut curvature = hessian.clone();
        curvature.scale(-1.0);
        curvature.add_scaled_identity(*damping);
        match la::cholesky(&curvature) {
            Ok(l) => break la::cholesky_solve(&l, &grad.value),
            Err(e) => {
                if escalated {
                    return Err(e);
                }
                *damping = escalate_damping(*damping, gershgorin_upper(&hessian));
                escalated = true;
            }
        }
    };
    let step_size = ctl.step_size.unwrap_or(1.0);
    let grad_norm = la::norm(&grad.value);
    let (new_params, step_norm) = apply_update(params, &direction, step_size, ctl.max_step_norm)?;
    Ok(StepOutcome {
        params: new_params,
        grad_norm,
        step_norm,
        diagnostics: alloc::vec![("lambda", *damping)],
    })
}

/// Structured second-order step. The Sherman-Morrison option builds the dense
/// inverse of the damped curvature from its diagonal-plus-rank-S form; the
/// conjugate-gradient option never materializes anything. Damping escalates
/// once on solver failure, then errors propagate.
pub fn step_scheme1<S: EstimatorSource>(
    src: &mut S,
    params: &VariationalParams,
    ctl: &StepControl,
    damping: &mut f64,
    option: SolveOption,
) -> Result<StepOutcome> {
    let grad = src.gradient(params)?;
    let hessian = src.structured_hessian(params)?;
    let mut escalated = false;
    let (direction, mut diagnostics) = loop {
        let attempt: Result<(Vec<f64>, Vec<(&'static str, f64)>)> = match option {
            SolveOption::ShermanMorrison => invert_structured(&hessian.negated(), *damping)
                .map(|inv| (inv.matvec(&grad.value), Vec::new())),
            SolveOption::ConjugateGradient => {
                let op = CurvatureOperator::new(&hessian, *damping);
                let max_iters = ctl.cg_max_iters.unwrap_or(2 * src.param_dim() + 10);
                conjugate_gradient(&op, &grad.value, ctl.cg_tol, max_iters).map(|out| {
                    (
                        out.solution,
                        alloc::vec![
                            ("cg_iters", out.iterations as f64),
                            ("cg_residual", out.residual_norm),
                        ],
                    )
                })
            }
        };
        match attempt {
            Ok(result) => break result,
            Err(e) if is_definiteness_error(&e) && !escalated => {
                *damping = escalate_damping(*damping, hessian.eig_upper_bound());
                escalated = true;
            }
            Err(e) => return Err(e),
        }
    };
    diagnostics.push(("lambda", *damping));
    let step_size = ctl.step_size.unwrap_or(1.0);
    let grad_norm = la::norm(&grad.value);
    let (new_params, step_norm) = apply_update(params, &direction, step_size, ctl.max_step_norm)?;
    Ok(StepOutcome {
        params: new_params,
        grad_norm,
        step_norm,
        diagnostics,
    })
}

/// Neumann-series second-order step: applies the inverse damped curvature to
/// the gradient from a stream of fresh per-sample curvature draws. An `Auto`
/// scaling constant is resolved on first use as 10x a power-iteration
/// estimate of a pilot Hessian's norm. A diverged series multiplies the
/// constant by 10 (persistently) and retries once.
pub fn step_scheme2<S: EstimatorSource>(
    src: &mut S,
    params: &VariationalParams,
    ctl: &StepControl,
    damping: &mut f64,
    scale: &mut Option<f64>,
) -> Result<StepOutcome> {
    let grad = src.gradient(params)?;
    let grad_norm = la::norm(&grad.value);
    if scale.is_none() {
        let pilot = src.structured_hessian(params)?;
        let estimate = spectral_norm_estimate(&pilot, 20);
        *scale = Some((10.0 * estimate).max(1e-8));
    }
    let mut escalated = false;
    let outcome = loop {
        let control = NeumannControl {
            scale: scale.unwrap(),
            damping: *damping,
            tol: ctl.neumann_tol_factor * grad_norm,
            max_steps: ctl.neumann_max_steps,
            literal_recursion: ctl.literal_neumann,
        };
        match neumann_inverse_apply(|_| src.curvature_draw(params), &grad.value, &control) {
            Ok(out) => break out,
            Err(Error::DivergedSeries { .. }) if !escalated => {
                *scale = Some(scale.unwrap() * 10.0);
                escalated = true;
            }
            Err(e) => return Err(e),
        }
    };
    let step_size = ctl.step_size.unwrap_or(1.0);
    let (new_params, step_norm) =
        apply_update(params, &outcome.solution, step_size, ctl.max_step_norm)?;
    Ok(StepOutcome {
        params: new_params,
        grad_norm,
        step_norm,
        diagnostics: alloc::vec![
            ("neumann_steps", outcome.steps as f64),
            ("c0", scale.unwrap()),
            ("lambda", *damping),
        ],
    })
}

/// A finished (or aborted) run: the last accepted parameters, the full trace,
/// and the aborting error if a step failed.
#[derive(Debug)]
pub struct RunOutput {
    pub params: VariationalParams,
    pub trace: Vec<TraceRecord>,
    pub aborted: Option<Error>,
}

impl RunOutput {
    /// Scaling constant and damping left in force at the end of the run, as
    /// recorded in the last trace row.
    pub fn final_diagnostic(&self, key: &str) -> Option<f64> {
        self.trace
            .last()?
            .diagnostics
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
    }
}

/// Iterate the selected scheme until a criterion fires. Each iteration
/// appends one trace row (with a fresh objective estimate); step errors abort
/// the run and leave the partial trace attached.
///
/// Damping raised by a step stays in force for the next step and decays
/// tenfold per successful iteration back toward the configured floor, so a
/// single indefinite estimate slows the run only transiently.
pub fn run<S: EstimatorSource, C: Clock>(
    scheme: Scheme,
    src: &mut S,
    initial: VariationalParams,
    ctl: &StepControl,
    criterion: &ConvergenceCriterion,
    clock: &C,
) -> RunOutput {
    let mut params = initial;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut damping = ctl.damping;
    let mut scale = match ctl.c0 {
        C0Choice::Auto => None,
        C0Choice::Fixed(v) => Some(v),
    };
    let mut grad_window: Vec<f64> = Vec::with_capacity(criterion.grad_window.max(1));

    for iteration in 1..=criterion.max_iterations {
        let started = clock.now_ms();
        let stepped = match scheme {
            Scheme::FirstOrder => step_first_order(src, &params, ctl),
            Scheme::DenseNewton => step_dense_newton(src, &params, ctl, &mut damping),
            Scheme::Scheme1Sm => step_scheme1(
                src,
                &params,
                ctl,
                &mut damping,
                SolveOption::ShermanMorrison,
            ),
            Scheme::Scheme1Cg => step_scheme1(
                src,
                &params,
                ctl,
                &mut damping,
                SolveOption::ConjugateGradient,
            ),
            Scheme::Scheme2 => step_scheme2(src, &params, ctl, &mut damping, &mut scale),
        };
        let outcome = match stepped {
            Ok(o) => o,
            Err(e) => {
                return RunOutput {
                    params,
                    trace,
                    aborted: Some(e),
                }
            }
        };
        let elbo_estimate = match src.elbo(&outcome.params) {
            Ok(v) => v,
            Err(e) => {
                return RunOutput {
                    params,
                    trace,
                    aborted: Some(e),
                }
            }
        };
        let wallclock_ms = clock.now_ms() - started;
        let kl_exact = src.kl_to_exact(&outcome.params);
        params = outcome.params;
        if damping > ctl.damping {
            damping = (damping / 10.0).max(ctl.damping);
        }
        trace.push(TraceRecord {
            iteration,
            elbo_estimate,
            grad_norm: outcome.grad_norm,
            kl_exact,
            step_norm: outcome.step_norm,
            wallclock_ms,
            diagnostics: outcome.diagnostics,
        });

        if let Some(tol) = criterion.param_tol {
            if outcome.step_norm <= tol {
                break;
            }
        }
        if let Some(tol) = criterion.grad_norm_tol {
            if grad_window.len() == criterion.grad_window.max(1) {
                grad_window.remove(0);
            }
            grad_window.push(outcome.grad_norm);
            if grad_window.len() == criterion.grad_window.max(1) {
                let avg = grad_window.iter().sum::<f64>() / grad_window.len() as f64;
                if avg <= tol {
                    break;
                }
            }
        }
    }

    RunOutput {
        params,
        trace,
        aborted: None,
    }
}

/// Convenience: assemble a Monte Carlo source over `(model, family, cfg)` and
/// run the scheme from `initial`.
#[allow(clippy::too_many_arguments)]
pub fn run_model<C: Clock>(
    scheme: Scheme,
    model: &LogJointModel,
    family: &FamilyDescriptor,
    initial: VariationalParams,
    cfg: &EstimatorConfig,
    ctl: &StepControl,
    criterion: &ConvergenceCriterion,
    clock: &C,
    elbo_samples: Option<usize>,
) -> Result<RunOutput> {
    let mut src = McSource::new(model, family, cfg, elbo_samples)?;
    Ok(run(scheme, &mut src, initial, ctl, criterion, clock))
}
