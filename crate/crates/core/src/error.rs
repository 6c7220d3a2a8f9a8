use nalgebra::DVector;
use thiserror::Error;

use crate::field::AreaOfInterest;

/// Invalid model or configuration values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("basis must contain at least one kernel")]
    EmptyBasis,
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("length-scale {index} must be positive and finite, got {value}")]
    NonPositiveLengthScale { index: usize, value: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("invalid area of interest {0:?}")]
    InvalidArea(AreaOfInterest),
    #[error("invalid range for {0}")]
    InvalidRange(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Failures of the online estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OnmError {
    #[error("measurement index {found} does not follow step {expected}")]
    IndexMismatch { expected: usize, found: usize },
    #[error("kernel vector has length {found}, estimator dimension is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate Hessian at step {step} (min eigenvalue {min_eigenvalue:e})")]
    DegenerateHessian { step: usize, min_eigenvalue: f64 },
    #[error("inverse Hessian corrupted at step {step}: rank-one denominator {denominator:e}")]
    CorruptInverse { step: usize, denominator: f64 },
    #[error("non-finite estimate at step {step}")]
    NonFinite { step: usize },
}

/// Batch Newton did not reach the gradient tolerance.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("batch optimum not converged after {iterations} iterations (|grad|_inf = {grad_norm:e})")]
pub struct BatchNotConverged {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Best point reached; callers may accept it.
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("no candidate positions")]
    NoCandidates,
    #[error("target coincides with the current position and no previous heading exists")]
    DegenerateTarget,
}
