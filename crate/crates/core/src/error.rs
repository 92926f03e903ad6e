//! Crate-wide error type.

use alloc::vec::Vec;
use core::fmt;

/// Everything that can go wrong across the family, model, estimator, solver
/// and optimizer layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    DimensionMismatch { expected: usize, got: usize },
    /// A sample count of zero was requested where at least one draw is needed.
    EmptySampleRequest,
    /// A variance (or precision) parameter must be strictly positive.
    NonPositiveVariance { value: f64 },
    /// A classification label was not exactly 0.0 or 1.0.
    NonBinaryLabel { row: usize, value: f64 },
    /// A design matrix with zero columns (or otherwise unusable shape).
    EmptyDesign,
    /// The model carries no exact posterior, so the oracle metric is undefined.
    MissingExactPosterior,
    /// A matrix that must be symmetric positive definite is not.
    NotPositiveDefinite,
    /// A parameter or sample vector contained a non-finite entry.
    NonFiniteValue { index: usize },
    /// The log-joint evaluated to a non-finite value at a sampled point.
    /// Carries the offending sample for diagnosis.
    NonFiniteLogJoint { value: f64, sample: Vec<f64> },
    /// Densification was requested above the dimension guard.
    DenseGuardExceeded { dim: usize, guard: usize },
    /// Sherman–Morrison denominator `1 + v^T A^{-1} u` fell below the floor.
    /// `term` identifies the rank-one update in a cascade, when applicable.
    SingularUpdate {
        denominator: f64,
        term: Option<usize>,
    },
    /// A diagonal block of the damped curvature could not be inverted.
    SingularBlock { block: usize },
    /// Pivoted elimination found the matrix numerically singular.
    SingularMatrix,
    /// Conjugate gradient observed `p^T K p <= 0`; the curvature operator is
    /// not positive definite. Raise the damping and retry.
    IndefiniteCurvature { curvature: f64 },
    /// The Neumann iterate norm exceeded the divergence guard relative to the
    /// right-hand side. Choose a larger scaling constant.
    DivergedSeries { norm_ratio: f64 },
    /// First-order steps need an explicit step size.
    StepSizeRequired,
    /// A proposed parameter update contained non-finite entries.
    NonFiniteStep,
    /// An estimator or step-control configuration value was invalid.
    InvalidConfig { what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::EmptySampleRequest => write!(f, "sample count must be at least 1"),
            Error::NonPositiveVariance { value } => {
                write!(f, "variance must be strictly positive, got {value}")
            }
            Error::NonBinaryLabel { row, value } => {
                write!(f, "label at row {row} must be 0 or 1, got {value}")
            }
            Error::EmptyDesign => write!(f, "design matrix must have at least one column"),
            Error::MissingExactPosterior => {
                write!(f, "model has no exact posterior oracle")
            }
            Error::NotPositiveDefinite => {
                write!(f, "matrix is not symmetric positive definite")
            }
            Error::NonFiniteValue { index } => {
                write!(f, "non-finite entry at index {index}")
            }
            Error::NonFiniteLogJoint { value, .. } => {
                write!(f, "log-joint evaluated to non-finite value {value}")
            }
            Error::DenseGuardExceeded { dim, guard } => {
                write!(f, "dense Hessian guard exceeded: dim {dim} > {guard}")
            }
            Error::SingularUpdate { denominator, term } => match term {
                Some(i) => write!(
                    f,
                    "singular rank-one update (term {i}): 1 + v^T A^-1 u = {denominator}"
                ),
                None => write!(
                    f,
                    "singular rank-one update: 1 + v^T A^-1 u = {denominator}"
                ),
            },
            Error::SingularBlock { block } => {
                write!(f, "diagonal block {block} is singular")
            }
            Error::SingularMatrix => write!(f, "matrix is numerically singular"),
            Error::IndefiniteCurvature { curvature } => write!(
                f,
                "indefinite curvature (p^T K p = {curvature}); raise the damping"
            ),
            Error::DivergedSeries { norm_ratio } => write!(
                f,
                "Neumann series diverged (iterate/rhs norm ratio {norm_ratio:.3e}); \
                 choose a larger scaling constant"
            ),
            Error::StepSizeRequired => {
                write!(f, "first-order steps require an explicit step size")
            }
            Error::NonFiniteStep => write!(f, "step produced non-finite parameters"),
            Error::InvalidConfig { what } => write!(f, "invalid configuration: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
