//! Logistic per-stage cost `g_t(beta) = log(1 + exp(-eta * z~_t * (beta' K(x_t) - tau)))`
//! with analytic gradient and Hessian, and sums over a measurement history.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::field::{Measurement, RbfBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Logistic sharpness.
    pub eta: f64,
    /// Sensor threshold, in field units.
    pub tau: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { eta: 5.0, tau: 1.0 }
    }
}

impl CostParams {
    pub fn new(eta: f64, tau: f64) -> Result<Self, ModelError> {
        let params = Self { eta, tau };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ModelError::NonPositive { what: "eta", value: self.eta });
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ModelError::NonPositive { what: "tau", value: self.tau });
        }
        Ok(())
    }
}

/// A measurement together with its cached kernel vector `K(x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTerm {
    pub measurement: Measurement,
    pub kernel: DVector<f64>,
}

impl StageTerm {
    pub fn new(basis: &RbfBasis, measurement: Measurement) -> Self {
        let kernel = basis.kernel_vector(&measurement.position);
        Self { measurement, kernel }
    }

    pub fn dim(&self) -> usize {
        self.kernel.len()
    }

    /// `beta' K(x_t) - tau`.
    pub fn margin(&self, params: &CostParams, beta: &DVector<f64>) -> f64 {
        beta.dot(&self.kernel) - params.tau
    }
}

/// `log(1 + e^a)` without overflow.
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// `1 / (1 + e^-y)` without overflow.
pub fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// `e^y / (1 + e^y)^2`, which is even in `y`.
pub fn logistic_curvature(y: f64) -> f64 {
    let e = (-y.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn stage_cost(params: &CostParams, beta: &DVector<f64>, term: &StageTerm) -> f64 {
    let zs = term.measurement.z_signed();
    softplus(-params.eta * zs * term.margin(params, beta))
}

pub fn stage_gradient(params: &CostParams, beta: &DVector<f64>, term: &StageTerm) -> DVector<f64> {
    &term.kernel * gradient_factor(params, beta, term)
}

/// Scalar multiplying `K(x_t)` in the stage gradient.
fn gradient_factor(params: &CostParams, beta: &DVector<f64>, term: &StageTerm) -> f64 {
    let zs = term.measurement.z_signed();
    // -eta z~ / (1 + exp(eta z~ m)) = -eta z~ * logistic(-eta z~ m)
    -params.eta * zs * logistic(-params.eta * zs * term.margin(params, beta))
}

/// `h(x_t, beta)` such that the stage Hessian is `h * K K'`.
pub fn stage_hessian_scale(params: &CostParams, beta: &DVector<f64>, term: &StageTerm) -> f64 {
    let zs = term.measurement.z_signed();
    debug_assert_eq!(zs * zs, 1.0);
    params.eta * params.eta * zs * zs * logistic_curvature(params.eta * zs * term.margin(params, beta))
}

pub fn stage_hessian(params: &CostParams, beta: &DVector<f64>, term: &StageTerm) -> DMatrix<f64> {
    let p = term.dim();
    let mut h = DMatrix::zeros(p, p);
    add_scaled_outer(&mut h, stage_hessian_scale(params, beta, term), &term.kernel);
    h
}

/// `m += s * k k'`. Every entry is formed as `s * (k_i * k_j)` so the result
/// stays exactly symmetric.
pub fn add_scaled_outer(m: &mut DMatrix<f64>, s: f64, k: &DVector<f64>) {
    let p = k.len();
    for j in 0..p {
        let kj = k[j];
        for i in 0..p {
            m[(i, j)] += s * (k[i] * kj);
        }
    }
}

pub fn total_cost(params: &CostParams, beta: &DVector<f64>, history: &[StageTerm]) -> f64 {
    history.iter().map(|t| stage_cost(params, beta, t)).sum()
}

pub fn total_gradient(params: &CostParams, beta: &DVector<f64>, history: &[StageTerm]) -> DVector<f64> {
    let mut g = DVector::zeros(beta.len());
    for t in history {
        g.axpy(gradient_factor(params, beta, t), &t.kernel, 1.0);
    }
    g
}

pub fn total_hessian(params: &CostParams, beta: &DVector<f64>, history: &[StageTerm]) -> DMatrix<f64> {
    let p = beta.len();
    let mut h = DMatrix::zeros(p, p);
    for t in history {
        add_scaled_outer(&mut h, stage_hessian_scale(params, beta, t), &t.kernel);
    }
    h
}
