//! Solvers for the Newton linear system on the damped curvature
//! `K = damping * I - H`, where `H` is a Hessian estimate.
//!
//! Near the objective maximum `H` is negative definite, so `K` is positive
//! definite at zero damping; far away, stochastic estimates are routinely
//! indefinite and the damping restores definiteness. With `K` in place of
//! `-H`, the Newton update becomes an ascent step `params + K^{-1} gradient`,
//! identical to the raw Newton step when the damping is zero.
//!
//! Three inverse routes are provided, ordered by how much structure they use:
//!
//! * [`invert_structured`]: blockwise base inverse plus a cascade of
//!   Sherman-Morrison rank-one updates, O(S d^2) total;
//! * [`conjugate_gradient`]: matrix-free solve against a
//!   [`CurvatureOperator`], O(S d) per product;
//! * [`neumann_inverse_apply`]: a stochastically truncated Neumann series
//!   driven by fresh per-sample curvature draws, O(d) per step at fixed
//!   block size.
//!
//! Dense LU-based `dense_solve` / `dense_invert` serve as the O(d^3)
//! reference backend and as the oracle the other routes are tested against.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::{Curvature, StructuredHessian};
use crate::la::{self, DenseMatrix};

/// Sherman-Morrison denominators below this magnitude raise
/// [`Error::SingularUpdate`] instead of returning garbage.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Neumann iterates whose norm exceeds this multiple of the right-hand side
/// norm abort with [`Error::DivergedSeries`].
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Solve `A y = b` with pivoted LU. Reference backend; O(d^3).
pub fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    la::solve(a, b)
}

/// Dense inverse via pivoted LU. Reference backend; O(d^3).
pub fn dense_invert(a: &DenseMatrix) -> Result<DenseMatrix> {
    la::invert(a)
}

/// The Sherman-Morrison rank-one inverse update:
/// `(A + u v^T)^{-1} = A^{-1} - A^{-1} u v^T A^{-1} / (1 + v^T A^{-1} u)`,
/// computed from `A^{-1}` in O(d^2) with no solve or factorization.
///
/// Fails with [`Error::SingularUpdate`] when the denominator magnitude drops
/// below [`DENOMINATOR_FLOOR`], mirroring the formula's hypothesis
/// `1 + v^T A^{-1} u != 0`.
pub fn sherman_morrison_update(a_inv: &DenseMatrix, u: &[f64], v: &[f64]) -> Result<DenseMatrix> {
    let d = a_inv.rows();
    if !a_inv.is_square() || u.len() != d || v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if u.len() != d { u.len() } else { v.len() },
        });
    }
    let a_inv_u = a_inv.matvec(u);
    // row vector v^T A^{-1}
    let mut vt_a_inv = vec![0.0; d];
    for i in 0..d {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for j in 0..d {
            vt_a_inv[j] += vi * a_inv.get(i, j);
        }
    }
    let denominator = 1.0 + la::dot(v, &a_inv_u);
    if !(denominator.is_finite()) || crate::math::abs(denominator) <= DENOMINATOR_FLOOR {
        return Err(Error::SingularUpdate {
            denominator,
            term: None,
        });
    }
    let mut out = a_inv.clone();
    let scale = 1.0 / denominator;
    for i in 0..d {
        let ti = a_inv_u[i] * scale;
        if ti == 0.0 {
            continue;
        }
        for j in 0..d {
            out.add_to(i, j, -ti * vt_a_inv[j]);
        }
    }
    Ok(out)
}

/// Dense inverse of `damping * I + diag_blocks + sum_i w_i u_i u_i^T`:
/// blockwise inverse of the shifted diagonal part in O(d), then one
/// Sherman-Morrison update per rank-one term, O(S d^2) total.
///
/// To invert the damped curvature `damping * I - H`, pass `h.negated()`.
pub fn invert_structured(h: &StructuredHessian, damping: f64) -> Result<DenseMatrix> {
    let base = h.diag().invert_shifted(damping)?;
    let mut inv = base.densify();
    for (idx, term) in h.rank_terms().iter().enumerate() {
        let scaled_u = la::scaled(&term.direction, term.weight);
        inv = sherman_morrison_update(&inv, &scaled_u, &term.direction).map_err(|e| match e {
            Error::SingularUpdate { denominator, .. } => Error::SingularUpdate {
                denominator,
                term: Some(idx),
            },
            other => other,
        })?;
    }
    Ok(inv)
}

/// The damped curvature operator `v -> damping * v - H v`, applied through
/// the structured matvec; never materializes a matrix.
pub struct CurvatureOperator<'a, C: Curvature> {
    curvature: &'a C,
    damping: f64,
}

impl<'a, C: Curvature> CurvatureOperator<'a, C> {
    pub fn new(curvature: &'a C, damping: f64) -> Self {
        CurvatureOperator { curvature, damping }
    }

    pub fn dim(&self) -> usize {
        self.curvature.dim()
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.curvature.matvec_into(v, out);
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = self.damping * x - *o;
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(v, &mut out);
        out
    }

    /// Densified operator, for oracles and the dense Newton path.
    pub fn densify(&self) -> DenseMatrix {
        let mut m = self.curvature.densify();
        m.scale(-1.0);
        m.add_scaled_identity(self.damping);
        m
    }
}

/// Outcome of a conjugate-gradient solve. Hitting the iteration cap is
/// reported, not an error.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Conjugate gradient on the curvature operator: only matvecs, no
/// materialized matrix. Stops when the residual drops below `tol` relative
/// to `|b|` or at `max_iters`.
///
/// A non-positive `p^T K p` observed mid-iteration means the operator is not
/// positive definite on the explored subspace; the caller should raise the
/// damping.
pub fn conjugate_gradient<C: Curvature>(
    op: &CurvatureOperator<'_, C>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    conjugate_gradient_observed(op, b, tol, max_iters, |_, _| {})
}

/// As [`conjugate_gradient`], invoking `observer(iteration, iterate)` after
/// each update; used by convergence-property tests.
pub fn conjugate_gradient_observed<C: Curvature>(
    op: &CurvatureOperator<'_, C>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<CgOutcome> {
    let d = op.dim();
    if b.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.len(),
        });
    }
    let b_norm = la::norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; d],
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
        });
    }
    let mut x = vec![0.0; d];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = la::dot(&r, &r);
    let mut kp = vec![0.0; d];
    for k in 1..=max_iters {
        op.apply_into(&p, &mut kp);
        let pkp = la::dot(&p, &kp);
        if pkp <= 0.0 {
            return Err(Error::IndefiniteCurvature { curvature: pkp });
        }
        let alpha = rr / pkp;
        la::axpy(alpha, &p, &mut x);
        la::axpy(-alpha, &kp, &mut r);
        let rr_next = la::dot(&r, &r);
        observer(k, &x);
        let res = crate::math::sqrt(rr_next);
        if res <= tol * b_norm {
            return Ok(CgOutcome {
                solution: x,
                iterations: k,
                residual_norm: res,
                converged: true,
            });
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(r.iter()) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok(CgOutcome {
        solution: x,
        iterations: max_iters,
        residual_norm: crate::math::sqrt(rr),
        converged: false,
    })
}

/// Settings for the stochastic Neumann-series inverse application.
#[derive(Debug, Clone, Copy)]
pub struct NeumannControl {
    /// The pre-specified scaling constant; must dominate the spectral norm of
    /// the damped curvature for the series to contract.
    pub scale: f64,
    /// The damping applied to each curvature draw.
    pub damping: f64,
    /// Stop when consecutive iterates differ by at most this norm.
    pub tol: f64,
    pub max_steps: usize,
    /// Replay the recursion with the iterate carried as `y/scale` instead of
    /// `y`; kept for comparison against the self-consistent recursion (see
    /// the function docs).
    pub literal_recursion: bool,
}

/// Outcome of the Neumann iteration.
#[derive(Debug, Clone)]
pub struct NeumannOutcome {
    pub solution: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

/// Stochastic Neumann-series application of the inverse damped curvature:
/// estimates `(damping * I - mean X)^{-1} g` from a stream of Hessian draws
/// `X_j` without ever forming a matrix.
///
/// With `M_j = (damping * I - X_j) / scale`, the default recursion is the
/// partial-sum identity `y_j = g + (I - M_j) y_{j-1}` started at `y_0 = g`,
/// and the estimate is `y_j / scale`. Each step costs one curvature draw and
/// one structured matvec. When `literal_recursion` is set, the carried term
/// is `y_{j-1}/scale` rather than `y_{j-1}`, which reproduces the alternative
/// line found in some write-ups of the scheme; it no longer matches the
/// partial-sum identity and is kept only for comparison.
///
/// The caller is responsible for a `scale` large enough that the scaled
/// operators contract on average; iterates that grow past
/// [`DIVERGENCE_GUARD`] times `|g|` abort with [`Error::DivergedSeries`],
/// which advises a larger scale.
pub fn neumann_inverse_apply<C: Curvature>(
    source: impl FnMut(usize) -> Result<C>,
    g: &[f64],
    ctl: &NeumannControl,
) -> Result<NeumannOutcome> {
    neumann_inverse_apply_observed(source, g, ctl, |_, _| {})
}

/// As [`neumann_inverse_apply`], invoking `observer(step, raw_iterate)` after
/// each update (the iterate is the unscaled `y_j`).
pub fn neumann_inverse_apply_observed<C: Curvature>(
    mut source: impl FnMut(usize) -> Result<C>,
    g: &[f64],
    ctl: &NeumannControl,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<NeumannOutcome> {
    if ctl.scale <= 0.0 || !ctl.scale.is_finite() {
        return Err(Error::InvalidConfig {
            what: "Neumann scale must be positive and finite",
        });
    }
    let d = g.len();
    let g_norm = la::norm(g);
    if g_norm == 0.0 {
        return Ok(NeumannOutcome {
            solution: vec![0.0; d],
            steps: 0,
            converged: true,
        });
    }
    let carry = if ctl.literal_recursion {
        1.0 / ctl.scale
    } else {
        1.0
    };
    let mut y = g.to_vec();
    let mut hy = vec![0.0; d];
    for j in 1..=ctl.max_steps {
        let draw = source(j)?;
        if draw.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: draw.dim(),
            });
        }
        draw.matvec_into(&y, &mut hy);
        let mut diff_sq = 0.0;
        let mut y_sq = 0.0;
        for i in 0..d {
            // M y = (damping * y - X y) / scale
            let m_y = (ctl.damping * y[i] - hy[i]) / ctl.scale;
            let next = g[i] + carry * y[i] - m_y;
            let delta = next - y[i];
            diff_sq += delta * delta;
            y[i] = next;
            y_sq += next * next;
        }
        let y_norm = crate::math::sqrt(y_sq);
        if !y_norm.is_finite() || y_norm > DIVERGENCE_GUARD * g_norm {
            return Err(Error::DivergedSeries {
                norm_ratio: y_norm / g_norm,
            });
        }
        observer(j, &y);
        if crate::math::sqrt(diff_sq) <= ctl.tol {
            return Ok(NeumannOutcome {
                solution: la::scaled(&y, 1.0 / ctl.scale),
                steps: j,
                converged: true,
            });
        }
    }
    Ok(NeumannOutcome {
        solution: la::scaled(&y, 1.0 / ctl.scale),
        steps: ctl.max_steps,
        converged: false,
    })
}

/// Gershgorin bound on the largest eigenvalue of a square matrix: the
/// maximum absolute row sum. Never an underestimate.
pub fn gershgorin_upper(m: &DenseMatrix) -> f64 {
    let mut bound = 0.0f64;
    for i in 0..m.rows() {
        let row_sum: f64 = m.row(i).iter().map(|v| crate::math::abs(*v)).sum();
        bound = bound.max(row_sum);
    }
    bound
}

/// Spectral-norm estimate of a symmetric operator by power iteration from a
/// fixed deterministic start vector.
pub fn spectral_norm_estimate<C: Curvature>(h: &C, iterations: usize) -> f64 {
    let d = h.dim();
    if d == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / crate::math::sqrt(d as f64); d];
    let mut hv = vec![0.0; d];
    let mut estimate = 0.0;
    for _ in 0..iterations {
        h.matvec_into(&v, &mut hv);
        let norm = la::norm(&hv);
        if norm == 0.0 || !norm.is_finite() {
            return norm;
        }
        estimate = norm;
        for (vi, hvi) in v.iter_mut().zip(hv.iter()) {
            *vi = hvi / norm;
        }
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::RankOne;
    use crate::la::BlockDiag;
    use crate::rng::Stream;

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    /// Random SPD structured matrix (as an explicit StructuredHessian) with
    /// its densification, resampling until positive definite.
    fn random_spd_structured(
        latent: usize,
        rank: usize,
        stream: &mut Stream,
    ) -> (StructuredHessian, DenseMatrix) {
        loop {
            let mut blocks = Vec::with_capacity(latent);
            for _ in 0..latent {
                // B = G G^T + 1.5 I, a comfortably SPD 2x2 block
                let g = [
                    stream.normal() * 0.7,
                    stream.normal() * 0.7,
                    stream.normal() * 0.7,
                    stream.normal() * 0.7,
                ];
                let mut b = DenseMatrix::zeros(2, 2);
                b.set(0, 0, g[0] * g[0] + g[1] * g[1] + 1.5);
                b.set(0, 1, g[0] * g[2] + g[1] * g[3]);
                b.set(1, 0, g[0] * g[2] + g[1] * g[3]);
                b.set(1, 1, g[2] * g[2] + g[3] * g[3] + 1.5);
                blocks.push(b);
            }
            let diag = BlockDiag::new(blocks).unwrap();
            let d = diag.dim();
            let mut terms = Vec::with_capacity(rank);
            for k in 0..rank {
                let mut dir = vec![0.0; d];
                stream.fill_normal(&mut dir);
                let scale = 1.0 / crate::math::sqrt(d as f64);
                for v in &mut dir {
                    *v *= scale;
                }
                // signed weights, as the estimator produces
                let w = stream.normal() * 0.8 + if k % 2 == 0 { 0.4 } else { -0.4 };
                terms.push(RankOne {
                    weight: w,
                    direction: dir,
                });
            }
            let h = StructuredHessian::new(diag, terms).unwrap();
            let dense = h.densify();
            if la::cholesky(&dense).is_ok() {
                return (h, dense);
            }
        }
    }

    #[test]
    fn sherman_morrison_rank_one_on_identity() {
        let a_inv = DenseMatrix::identity(2);
        let u = e(0, 2);
        let out = sherman_morrison_update(&a_inv, &u, &u).unwrap();
        // (I + e1 e1^T)^{-1} = diag(1/2, 1)
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((out.get(1, 1) - 1.0).abs() < 1e-15);
        assert!(out.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn sherman_morrison_detects_singular_denominator() {
        let a_inv = DenseMatrix::identity(2);
        let u = e(0, 2);
        let v = la::scaled(&u, -1.0);
        match sherman_morrison_update(&a_inv, &u, &v) {
            Err(Error::SingularUpdate { denominator, .. }) => {
                assert!(denominator.abs() <= DENOMINATOR_FLOOR)
            }
            other => panic!("expected SingularUpdate, got {other:?}"),
        }
    }

    #[test]
    fn sherman_morrison_matches_dense_inverse() {
        let mut stream = Stream::seed_from_u64(2);
        for _ in 0..10 {
            let d = 10;
            // random SPD A = G G^T + I
            let mut g = DenseMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    g.set(i, j, stream.normal() * 0.4);
                }
            }
            let mut a = g.matmul(&g.transpose());
            a.add_scaled_identity(1.0);
            let a_inv = dense_invert(&a).unwrap();
            let mut u = vec![0.0; d];
            let mut v = vec![0.0; d];
            stream.fill_normal(&mut u);
            stream.fill_normal(&mut v);

            let updated_inv = sherman_morrison_update(&a_inv, &u, &v).unwrap();
            let mut a_updated = a.clone();
            for i in 0..d {
                for j in 0..d {
                    a_updated.add_to(i, j, u[i] * v[j]);
                }
            }
            let prod = updated_inv.matmul(&a_updated);
            let err = prod.max_abs_diff(&DenseMatrix::identity(d));
            assert!(err < 1e-8, "identity residual {err}");
        }
    }

    #[test]
    fn invert_structured_no_correction_is_blockwise() {
        let mut b0 = DenseMatrix::zeros(2, 2);
        b0.set(0, 0, 1.0);
        b0.set(1, 1, 3.0);
        let h = StructuredHessian::new(BlockDiag::new(vec![b0]).unwrap(), vec![]).unwrap();
        let inv = invert_structured(&h, 1.0).unwrap();
        // (I + diag(1,3))^{-1} = diag(1/2, 1/4)
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invert_structured_identity_is_identity() {
        let h = StructuredHessian::new(BlockDiag::identity(&[2, 2, 2]), vec![]).unwrap();
        let inv = invert_structured(&h, 0.0).unwrap();
        assert_eq!(inv, DenseMatrix::identity(6));
    }

    #[test]
    fn invert_structured_matches_dense_oracle() {
        let mut stream = Stream::seed_from_u64(31);
        for _ in 0..10 {
            let (h, dense) = random_spd_structured(10, 3, &mut stream);
            let inv = invert_structured(&h, 0.0).unwrap();
            let oracle = dense_invert(&dense).unwrap();
            let err = inv.max_abs_diff(&oracle) / oracle.max_abs().max(1.0);
            assert!(err < 1e-8, "relative error {err}");
        }
    }

    #[test]
    fn invert_structured_order_independent() {
        let mut stream = Stream::seed_from_u64(47);
        let (h, _) = random_spd_structured(8, 4, &mut stream);
        let inv = invert_structured(&h, 0.0).unwrap();
        // reverse the rank-one cascade
        let reversed = StructuredHessian::new(
            h.diag().clone(),
            h.rank_terms().iter().rev().cloned().collect(),
        )
        .unwrap();
        let inv_rev = invert_structured(&reversed, 0.0).unwrap();
        let diff = inv.max_abs_diff(&inv_rev);
        assert!(diff < 1e-8, "permutation sensitivity {diff}");
    }

    #[test]
    fn invert_structured_reports_singular_block() {
        let b0 = DenseMatrix::zeros(2, 2);
        let h = StructuredHessian::new(BlockDiag::new(vec![b0]).unwrap(), vec![]).unwrap();
        assert_eq!(
            invert_structured(&h, 0.0).err(),
            Some(Error::SingularBlock { block: 0 })
        );
    }

    #[test]
    fn cg_identity_converges_in_one_iteration() {
        let h = StructuredHessian::new(BlockDiag::identity(&[2]), vec![]).unwrap();
        // K = 2I - I = I
        let op = CurvatureOperator::new(&h, 2.0);
        let b = [0.7, -0.2];
        let out = conjugate_gradient(&op, &b, 1e-12, 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert!(la::max_abs_diff(&out.solution, &b) < 1e-12);
    }

    #[test]
    fn cg_diagonal_system() {
        // K = diag(2, 4) via H = -diag(2,4), damping 0
        let mut b0 = DenseMatrix::zeros(2, 2);
        b0.set(0, 0, -2.0);
        b0.set(1, 1, -4.0);
        let h = StructuredHessian::new(BlockDiag::new(vec![b0]).unwrap(), vec![]).unwrap();
        let op = CurvatureOperator::new(&h, 0.0);
        let out = conjugate_gradient(&op, &[2.0, 4.0], 1e-12, 10).unwrap();
        assert!(out.iterations <= 2);
        assert!(la::max_abs_diff(&out.solution, &[1.0, 1.0]) < 1e-12);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut stream = Stream::seed_from_u64(5);
        for _ in 0..5 {
            let (h, dense) = random_spd_structured(25, 4, &mut stream);
            let neg = h.negated(); // K = 0*I - (-dense) = dense
            let op = CurvatureOperator::new(&neg, 0.0);
            let mut b = vec![0.0; 50];
            stream.fill_normal(&mut b);
            let out = conjugate_gradient(&op, &b, 1e-12, 200).unwrap();
            let oracle = dense_solve(&dense, &b).unwrap();
            let err = la::max_abs_diff(&out.solution, &oracle) / la::norm(&oracle).max(1.0);
            assert!(err < 1e-8, "cg vs dense {err}");
        }
    }

    #[test]
    fn cg_error_is_monotone_in_operator_norm() {
        let mut stream = Stream::seed_from_u64(6);
        let (h, dense) = random_spd_structured(15, 3, &mut stream);
        let neg = h.negated();
        let op = CurvatureOperator::new(&neg, 0.0);
        let mut b = vec![0.0; 30];
        stream.fill_normal(&mut b);
        let exact = dense_solve(&dense, &b).unwrap();
        let mut last_err = f64::INFINITY;
        conjugate_gradient_observed(&op, &b, 1e-13, 100, |_, x| {
            let diff = la::sub(x, &exact);
            let a_err = la::dot(&diff, &dense.matvec(&diff));
            assert!(
                a_err <= last_err * (1.0 + 1e-9),
                "A-norm error increased: {a_err} > {last_err}"
            );
            last_err = a_err;
        })
        .unwrap();
    }

    #[test]
    fn cg_rejects_indefinite_operator() {
        // H = +I so K = -I at zero damping
        let h = StructuredHessian::new(BlockDiag::identity(&[2]), vec![]).unwrap();
        let op = CurvatureOperator::new(&h, 0.0);
        assert!(matches!(
            conjugate_gradient(&op, &[1.0, 0.0], 1e-10, 10),
            Err(Error::IndefiniteCurvature { .. })
        ));
    }

    #[test]
    fn neumann_scalar_geometric_series() {
        // X = -K with K = 0.5 I: y_j = sum_{k<=j} 0.5^k e1 -> 2 e1
        let mut x = DenseMatrix::identity(2);
        x.scale(-0.5);
        let ctl = NeumannControl {
            scale: 1.0,
            damping: 0.0,
            tol: 0.0,
            max_steps: 60,
            literal_recursion: false,
        };
        let g = e(0, 2);
        let mut prev_err = 1.0f64; // |y_0 - 2| with y_0 = g = e1
        let mut checked = 0;
        let out = neumann_inverse_apply_observed(
            |_| Ok(x.clone()),
            &g,
            &ctl,
            |j, y| {
                let expected: f64 = 2.0 * (1.0 - 0.5f64.powi(j as i32 + 1));
                assert!(
                    (y[0] - expected).abs() < 1e-12,
                    "step {j}: {} vs {expected}",
                    y[0]
                );
                let err = (y[0] - 2.0).abs();
                // stop ratio checks once representation noise at |y| ~ 2 bites
                if prev_err > 1e-9 {
                    assert!(
                        (err / prev_err - 0.5).abs() < 1e-4,
                        "ratio not halving at {j}"
                    );
                    checked += 1;
                }
                prev_err = err;
            },
        )
        .unwrap();
        assert!(checked > 20);
        assert!((out.solution[0] - 2.0).abs() < 1e-12);
        assert!(out.solution[1].abs() < 1e-15);
    }

    #[test]
    fn neumann_identity_terminates_immediately() {
        let mut x = DenseMatrix::identity(3);
        x.scale(-1.0); // K = I
        let ctl = NeumannControl {
            scale: 1.0,
            damping: 0.0,
            tol: 1e-14,
            max_steps: 10,
            literal_recursion: false,
        };
        let g = [0.3, -0.2, 0.9];
        let out = neumann_inverse_apply(|_| Ok(x.clone()), &g, &ctl).unwrap();
        assert_eq!(out.steps, 1);
        assert!(out.converged);
        assert!(la::max_abs_diff(&out.solution, &g) < 1e-15);
    }

    #[test]
    fn neumann_matches_dense_solve_on_spd() {
        let mut stream = Stream::seed_from_u64(12);
        let (_, dense) = random_spd_structured(5, 2, &mut stream);
        // invert K = dense; draws are X = -dense so damping*I - X = dense
        let mut x = dense.clone();
        x.scale(-1.0);
        let scale = 1.5 * spectral_norm_estimate(&dense, 30);
        let ctl = NeumannControl {
            scale,
            damping: 0.0,
            tol: 1e-13,
            max_steps: 500,
            literal_recursion: false,
        };
        let mut g = vec![0.0; 10];
        stream.fill_normal(&mut g);
        let out = neumann_inverse_apply(|_| Ok(x.clone()), &g, &ctl).unwrap();
        let oracle = dense_solve(&dense, &g).unwrap();
        let err = la::max_abs_diff(&out.solution, &oracle) / la::norm(&oracle).max(1.0);
        assert!(err < 1e-6, "neumann vs dense {err}");
    }

    #[test]
    fn neumann_contraction_bound_observed() {
        // deterministic source, contraction factor rho = |I - K/scale|
        let mut k = DenseMatrix::identity(4);
        k.set(0, 0, 3.0);
        k.set(1, 1, 1.2);
        k.set(2, 2, 2.0);
        k.set(3, 3, 0.8);
        let scale = 4.0;
        let rho = (1.0f64 - 0.8 / scale).max(0.0); // largest |1 - eig/scale|
        let mut x = k.clone();
        x.scale(-1.0);
        let g = [1.0, -0.5, 0.25, 0.75];
        let exact = dense_solve(&k, &g).unwrap();
        let exact_norm = la::norm(&exact);
        let ctl = NeumannControl {
            scale,
            damping: 0.0,
            tol: 0.0,
            max_steps: 120,
            literal_recursion: false,
        };
        neumann_inverse_apply_observed(
            |_| Ok(x.clone()),
            &g,
            &ctl,
            |j, y| {
                let scaled = la::scaled(y, 1.0 / scale);
                let err = la::norm(&la::sub(&scaled, &exact));
                let bound = 10.0 * rho.powi(j as i32) * exact_norm * (1.0 + rho) / (1.0 - rho);
                // the geometric bound dips below representation noise late on
                if bound > 1e-10 {
                    assert!(err <= bound, "step {j}: error {err} above bound {bound}");
                }
            },
        )
        .unwrap();
    }

    #[test]
    fn literal_recursion_reaches_its_own_fixed_point() {
        // with K = 0.5 I and scale 2, the partial-sum recursion converges to
        // K^{-1} g = 2 g, while the literal carried-term variant has fixed
        // point y = g / (1 - 1/s + k/s), i.e. y/s = (2/3) g here
        let mut x = DenseMatrix::identity(2);
        x.scale(-0.5);
        let g = [1.0, -2.0];
        let base = NeumannControl {
            scale: 2.0,
            damping: 0.0,
            tol: 1e-14,
            max_steps: 2000,
            literal_recursion: false,
        };
        let standard = neumann_inverse_apply(|_| Ok(x.clone()), &g, &base).unwrap();
        assert!(la::max_abs_diff(&standard.solution, &la::scaled(&g, 2.0)) < 1e-10);

        let literal = NeumannControl {
            literal_recursion: true,
            ..base
        };
        let alt = neumann_inverse_apply(|_| Ok(x.clone()), &g, &literal).unwrap();
        let fixed_point_scale = 1.0 / (1.0 - 0.5 + 0.25) / 2.0; // y*/scale per component
        assert!(
            la::max_abs_diff(&alt.solution, &la::scaled(&g, fixed_point_scale)) < 1e-10,
            "literal recursion fixed point off: {:?}",
            alt.solution
        );
    }

    #[test]
    fn curvature_operator_is_linear() {
        let mut stream = Stream::seed_from_u64(88);
        let (h, _) = random_spd_structured(6, 3, &mut stream);
        let op = CurvatureOperator::new(&h, 0.7);
        for _ in 0..20 {
            let mut x = vec![0.0; 12];
            let mut y = vec![0.0; 12];
            stream.fill_normal(&mut x);
            stream.fill_normal(&mut y);
            let a = stream.normal();
            let b = stream.normal();
            let mut combo = vec![0.0; 12];
            for i in 0..12 {
                combo[i] = a * x[i] + b * y[i];
            }
            let lhs = op.apply(&combo);
            let fx = op.apply(&x);
            let fy = op.apply(&y);
            let mut rhs = vec![0.0; 12];
            for i in 0..12 {
                rhs[i] = a * fx[i] + b * fy[i];
            }
            let scale = la::norm(&rhs).max(1.0);
            assert!(la::max_abs_diff(&lhs, &rhs) / scale < 1e-10);
        }
    }

    #[test]
    fn neumann_divergence_guard_fires() {
        // K = 4I with scale 1: I - K/scale = -3I, iterates triple each step
        let mut x = DenseMatrix::identity(2);
        x.scale(-4.0);
        let ctl = NeumannControl {
            scale: 1.0,
            damping: 0.0,
            tol: 0.0,
            max_steps: 1000,
            literal_recursion: false,
        };
        match neumann_inverse_apply(|_| Ok(x.clone()), &[1.0, 0.0], &ctl) {
            Err(Error::DivergedSeries { norm_ratio }) => assert!(norm_ratio > DIVERGENCE_GUARD),
            other => panic!("expected DivergedSeries, got {other:?}"),
        }
    }

    #[test]
    fn spectral_norm_estimate_on_diagonal() {
        let mut m = DenseMatrix::identity(3);
        m.set(0, 0, -5.0);
        m.set(1, 1, 2.0);
        m.set(2, 2, 0.5);
        let est = spectral_norm_estimate(&m, 50);
        assert!((est - 5.0).abs() < 1e-6, "estimate {est}");
    }

    #[test]
    fn dense_solve_reference_cases() {
        let a = DenseMatrix::identity(3);
        let b = [1.0, 2.0, 3.0];
        assert_eq!(dense_solve(&a, &b).unwrap(), b.to_vec());

        let mut stream = Stream::seed_from_u64(9);
        let d = 30;
        let mut g = DenseMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                g.set(i, j, stream.normal());
            }
        }
        let mut a = g.matmul(&g.transpose());
        a.add_scaled_identity(d as f64 * 0.1);
        let inv = dense_invert(&a).unwrap();
        let prod = a.matmul(&inv);
        let err = prod.max_abs_diff(&DenseMatrix::identity(d));
        assert!(err < 1e-9, "A A^-1 far from identity: {err}");
    }
}
