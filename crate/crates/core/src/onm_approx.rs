//! Approximate online Newton's method with constant per-step cost.
//!
//! The accumulated Hessian is replaced by the running sum
//! `H_k = H_{k-1} + nabla^2 g_k(beta_hat_k)` and the accumulated gradient by
//! the latest stage gradient. Only the inverse `P_k = H_k^{-1}` is stored and
//! it is updated with the Sherman-Morrison formula, so a step costs `O(p^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{stage_gradient, stage_hessian_scale, CostParams, StageTerm};
use crate::error::{ModelError, OnmError};
use crate::linalg::symmetrize;
use crate::onm_exact::StepInfo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxOnmConfig {
    /// The inverse Hessian starts at `epsilon * I` (so `H_0 = I / epsilon`).
    pub epsilon: f64,
}

impl Default for ApproxOnmConfig {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

impl ApproxOnmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::NonPositive { what: "approx.epsilon", value: self.epsilon });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ApproxOnm {
    beta_hat: DVector<f64>,
    inv_hessian: DMatrix<f64>,
    steps: usize,
}

impl ApproxOnm {
    pub fn new(beta_0: DVector<f64>, config: ApproxOnmConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let p = beta_0.len();
        Ok(Self { beta_hat: beta_0, inv_hessian: DMatrix::identity(p, p) * config.epsilon, steps: 0 })
    }

    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    /// `P_k`, the maintained inverse of the accumulated Hessian.
    pub fn inv_hessian(&self) -> &DMatrix<f64> {
        &self.inv_hessian
    }

    /// `H_k = P_k^{-1}`, formed explicitly.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.inv_hessian
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.inv_hessian.clone().try_inverse().expect("inverse Hessian is positive definite"))
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Rank-one update of `P` with the curvature of the new measurement at
    /// the current estimate, followed by the Newton step `beta -= P_k G_k`.
    pub fn step(&mut self, params: &CostParams, term: &StageTerm) -> Result<StepInfo, OnmError> {
        if term.measurement.index != self.steps {
            return Err(OnmError::IndexMismatch { expected: self.steps, found: term.measurement.index });
        }
        if term.dim() != self.beta_hat.len() {
            return Err(OnmError::DimensionMismatch { expected: self.beta_hat.len(), found: term.dim() });
        }
        let h = stage_hessian_scale(params, &self.beta_hat, term);
        let k = &term.kernel;
        let pk = &self.inv_hessian * k;
        let denominator = 1.0 + h * k.dot(&pk);
        if !(denominator > 0.0 && denominator.is_finite()) {
            return Err(OnmError::CorruptInverse { step: self.steps, denominator });
        }
        // P (I - h K K' P / d) = P - (h / d) (P K)(P K)'  for symmetric P
        self.inv_hessian.ger(-h / denominator, &pk, &pk, 1.0);
        symmetrize(&mut self.inv_hessian);

        let g = stage_gradient(params, &self.beta_hat, term);
        self.beta_hat.gemv(-1.0, &self.inv_hessian, &g, 1.0);
        if !self.beta_hat.iter().all(|v| v.is_finite()) {
            return Err(OnmError::NonFinite { step: self.steps });
        }
        self.steps += 1;
        Ok(StepInfo { grad_norm: g.norm(), hess_min_eig: None, damped: false, regularized: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Measurement;
    use nalgebra::Point2;

    #[test]
    fn initialization_is_scaled_identity() {
        let onm = ApproxOnm::new(DVector::zeros(16), ApproxOnmConfig::default()).unwrap();
        assert_eq!(onm.inv_hessian(), &(DMatrix::identity(16, 16) * 0.1));
        let onm = ApproxOnm::new(DVector::zeros(3), ApproxOnmConfig { epsilon: 1.0 }).unwrap();
        assert_eq!(onm.inv_hessian(), &DMatrix::identity(3, 3));
        assert!(ApproxOnm::new(DVector::zeros(3), ApproxOnmConfig { epsilon: 0.0 }).is_err());
    }

    #[test]
    fn saturated_measurement_is_uninformative() {
        let params = CostParams::default();
        let beta0 = DVector::from_vec(vec![20.0, 20.0]);
        let mut onm = ApproxOnm::new(beta0.clone(), ApproxOnmConfig::default()).unwrap();
        let p0 = onm.inv_hessian().clone();
        let t = StageTerm {
            measurement: Measurement::new(Point2::origin(), true, 0),
            kernel: DVector::from_vec(vec![1.0, 0.5]),
        };
        onm.step(&params, &t).unwrap();
        assert!((onm.beta_hat() - beta0).norm() < 1e-10);
        assert!((onm.inv_hessian() - p0).norm() < 1e-10);
    }

    #[test]
    fn step_index_is_checked() {
        let mut onm = ApproxOnm::new(DVector::zeros(1), ApproxOnmConfig::default()).unwrap();
        let t = StageTerm { measurement: Measurement::new(Point2::origin(), true, 1), kernel: DVector::from_vec(vec![1.0]) };
        assert!(matches!(onm.step(&CostParams::default(), &t), Err(OnmError::IndexMismatch { .. })));
    }

    #[test]
    fn hessian_is_inverse_of_maintained_matrix() {
        let onm = ApproxOnm::new(DVector::zeros(4), ApproxOnmConfig { epsilon: 0.25 }).unwrap();
        assert!((onm.hessian() - DMatrix::identity(4, 4) * 4.0).norm() < 1e-14);
    }
}
