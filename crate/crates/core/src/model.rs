//! Black-box log-joint models `ln p(theta, X)` and, for conjugate models,
//! exact posteriors and evidence used as oracles.
//!
//! Everything downstream consumes only `log_joint`; the posterior/evidence
//! fields exist so tests and the benchmark harness can measure convergence
//! against ground truth. The log-joint convention is used throughout: it
//! differs from `ln p(theta | X)` by the parameter-independent constant
//! `ln p(X)`, so gradients and Hessians of the variational objective are
//! unchanged.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::family::{FamilyDescriptor, VariationalParams};
use crate::la::{self, DenseMatrix};
use crate::math;

/// Exact Gaussian posterior (possibly correlated).
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
}

/// A latent dimension, a black-box log-joint, and optional exact oracles.
pub struct LogJointModel {
    latent_dim: usize,
    log_joint: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    exact_posterior: Option<GaussianPosterior>,
    log_evidence: Option<f64>,
}

impl LogJointModel {
    pub fn new(
        latent_dim: usize,
        log_joint: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LogJointModel {
            latent_dim,
            log_joint: Box::new(log_joint),
            exact_posterior: None,
            log_evidence: None,
        }
    }

    /// Attach exact oracles. The covariance must be symmetric positive
    /// definite and match the latent dimension.
    pub fn with_posterior(
        mut self,
        posterior: GaussianPosterior,
        log_evidence: f64,
    ) -> Result<Self> {
        if posterior.mean.len() != self.latent_dim || posterior.cov.rows() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: posterior.mean.len(),
            });
        }
        la::cholesky(&posterior.cov)?;
        self.exact_posterior = Some(posterior);
        self.log_evidence = Some(log_evidence);
        Ok(self)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn log_joint(&self, theta: &[f64]) -> f64 {
        (self.log_joint)(theta)
    }

    pub fn exact_posterior(&self) -> Option<&GaussianPosterior> {
        self.exact_posterior.as_ref()
    }

    pub fn log_evidence(&self) -> Option<f64> {
        self.log_evidence
    }
}

impl core::fmt::Debug for LogJointModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LogJointModel")
            .field("latent_dim", &self.latent_dim)
            .field("has_posterior", &self.exact_posterior.is_some())
            .field("log_evidence", &self.log_evidence)
            .finish()
    }
}

/// Observed data: a matrix of observations and optional targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub observations: DenseMatrix,
    pub targets: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(observations: DenseMatrix, targets: Option<Vec<f64>>) -> Result<Self> {
        if let Some(t) = &targets {
            if t.len() != observations.rows() {
                return Err(Error::DimensionMismatch {
                    expected: observations.rows(),
                    got: t.len(),
                });
            }
        }
        Ok(Dataset {
            observations,
            targets,
        })
    }
}

fn check_positive(value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositiveVariance { value })
    }
}

/// 1-d Gaussian likelihood with a Gaussian prior on its mean: the classic
/// conjugate model. Posterior and evidence are closed-form.
pub fn conjugate_gaussian(
    data: &[f64],
    prior_mean: f64,
    prior_var: f64,
    noise_var: f64,
) -> Result<LogJointModel> {
    check_positive(prior_var)?;
    check_positive(noise_var)?;
    let n = data.len() as f64;
    let sum: f64 = data.iter().sum();
    let sum_sq: f64 = data.iter().map(|x| x * x).sum();

    let posterior_precision = 1.0 / prior_var + n / noise_var;
    let posterior_var = 1.0 / posterior_precision;
    let shifted = prior_mean / prior_var + sum / noise_var;
    let posterior_mean = shifted * posterior_var;

    let log_evidence = -0.5 * n * (math::LN_2PI + math::ln(noise_var))
        - 0.5 * math::ln(prior_var * posterior_precision)
        - 0.5
            * (prior_mean * prior_mean / prior_var + sum_sq / noise_var
                - shifted * shifted / posterior_precision);

    let model = LogJointModel::new(1, move |theta: &[f64]| {
        let t = theta[0];
        let prior = -0.5 * math::LN_2PI
            - 0.5 * math::ln(prior_var)
            - (t - prior_mean) * (t - prior_mean) / (2.0 * prior_var);
        let resid = sum_sq - 2.0 * t * sum + n * t * t;
        let lik = -0.5 * n * (math::LN_2PI + math::ln(noise_var)) - resid / (2.0 * noise_var);
        prior + lik
    });

    let mut cov = DenseMatrix::zeros(1, 1);
    cov.set(0, 0, posterior_var);
    model.with_posterior(
        GaussianPosterior {
            mean: alloc::vec![posterior_mean],
            cov,
        },
        log_evidence,
    )
}

/// Bayesian linear regression with isotropic Gaussian prior
/// `w ~ N(0, prior_precision^-1 I)` and Gaussian noise. Multivariate
/// Gaussian-posterior oracle; exercises latent dimension > 1.
pub fn bayes_linreg(
    design: &DenseMatrix,
    targets: &[f64],
    prior_precision: f64,
    noise_var: f64,
) -> Result<LogJointModel> {
    check_positive(prior_precision)?;
    check_positive(noise_var)?;
    let n = design.rows();
    let d = design.cols();
    if d == 0 {
        return Err(Error::EmptyDesign);
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }

    // Lambda = alpha I + X^T X / s2
    let mut precision = DenseMatrix::zeros(d, d);
    for row in 0..n {
        let x = design.row(row);
        for i in 0..d {
            for j in 0..d {
                precision.add_to(i, j, x[i] * x[j] / noise_var);
            }
        }
    }
    precision.add_scaled_identity(prior_precision);

    // X^T y / s2
    let mut xty = alloc::vec![0.0; d];
    for row in 0..n {
        let x = design.row(row);
        for i in 0..d {
            xty[i] += x[i] * targets[row] / noise_var;
        }
    }

    let chol = la::cholesky(&precision)?;
    let mean = la::cholesky_solve(&chol, &xty);
    let cov = la::invert(&precision)?;

    // ln p(y) = (d/2) ln alpha - (n/2) ln(2 pi s2) - E(mean) - ln det(Lambda)/2
    let mut fit = 0.0;
    for row in 0..n {
        let pred = la::dot(design.row(row), &mean);
        let r = targets[row] - pred;
        fit += r * r;
    }
    let energy = fit / (2.0 * noise_var) + 0.5 * prior_precision * la::dot(&mean, &mean);
    let log_evidence = 0.5 * d as f64 * math::ln(prior_precision)
        - 0.5 * n as f64 * (math::LN_2PI + math::ln(noise_var))
        - energy
        - 0.5 * la::ln_det_from_cholesky(&chol);

    let design_owned = design.clone();
    let targets_owned = targets.to_vec();
    let model = LogJointModel::new(d, move |w: &[f64]| {
        let mut acc = 0.5 * d as f64 * (math::ln(prior_precision) - math::LN_2PI)
            - 0.5 * prior_precision * la::dot(w, w);
        for row in 0..design_owned.rows() {
            let pred = la::dot(design_owned.row(row), w);
            let r = targets_owned[row] - pred;
            acc += -0.5 * (math::LN_2PI + math::ln(noise_var)) - r * r / (2.0 * noise_var);
        }
        acc
    });

    model.with_posterior(GaussianPosterior { mean, cov }, log_evidence)
}

/// Overflow-safe `ln(1 + exp(z))`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + math::log1p(math::exp(-math::abs(z)))
}

/// Bayesian logistic regression with isotropic Gaussian prior. Non-conjugate:
/// no exact posterior, no evidence; exercises the estimators where no
/// closed-form check exists.
pub fn bayes_logreg(
    design: &DenseMatrix,
    labels: &[f64],
    prior_precision: f64,
) -> Result<LogJointModel> {
    check_positive(prior_precision)?;
    let n = design.rows();
    let d = design.cols();
    if d == 0 {
        return Err(Error::EmptyDesign);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    for (row, &y) in labels.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::NonBinaryLabel { row, value: y });
        }
    }

    let design_owned = design.clone();
    let labels_owned = labels.to_vec();
    Ok(LogJointModel::new(d, move |w: &[f64]| {
        let mut acc = 0.5 * d as f64 * (math::ln(prior_precision) - math::LN_2PI)
            - 0.5 * prior_precision * la::dot(w, w);
        for row in 0..design_owned.rows() {
            let z = la::dot(design_owned.row(row), w);
            // y ln sigma(z) + (1 - y) ln(1 - sigma(z)) = y z - softplus(z)
            acc += labels_owned[row] * z - softplus(z);
        }
        acc
    }))
}

/// Closed-form `KL(q || p(theta | X))` between the diagonal Gaussian `q` and
/// the model's exact Gaussian posterior. Non-negative; zero only when the
/// posterior is itself diagonal and `q` matches it.
pub fn exact_kl_to_posterior(
    family: &FamilyDescriptor,
    params: &VariationalParams,
    model: &LogJointModel,
) -> Result<f64> {
    let posterior = model
        .exact_posterior()
        .ok_or(Error::MissingExactPosterior)?;
    let d = family.factor_count();
    if params.values().len() != family.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.param_dim(),
            got: params.values().len(),
        });
    }
    if posterior.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: posterior.mean.len(),
        });
    }

    let chol = la::cholesky(&posterior.cov)?;
    let precision = la::invert(&posterior.cov)?;
    let ln_det_cov = la::ln_det_from_cholesky(&chol);

    let mut trace = 0.0;
    let mut ln_det_q = 0.0;
    let mut delta = alloc::vec![0.0; d];
    for i in 0..d {
        let off = family.block_offset(i);
        let mu = params.values()[off];
        let rho = params.values()[off + 1];
        let var_q = math::exp(2.0 * rho);
        trace += precision.get(i, i) * var_q;
        ln_det_q += 2.0 * rho;
        delta[i] = posterior.mean[i] - mu;
    }
    let maha = la::dot(&delta, &precision.matvec(&delta));
    Ok(0.5 * (trace + maha - d as f64 + ln_det_cov - ln_det_q))
}
