//! Exact online Newton's method over the full measurement history, with
//! damping and regularization for the early, nearly singular Hessians, and
//! batch-optimum diagnostics (empirical regret, windowed excitation).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{stage_hessian, total_cost, total_gradient, total_hessian, CostParams, StageTerm};
use crate::error::{BatchNotConverged, ModelError, OnmError};
use crate::linalg::{min_eigenvalue_unchecked, spd_solve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactOnmConfig {
    /// Step multiplier used while `lambda_min(H) < switch_threshold`.
    pub damping_multiplier: f64,
    /// Multiple of the identity added when `lambda_min(H) < singular_threshold`.
    pub regularization: f64,
    pub switch_threshold: f64,
    pub singular_threshold: f64,
}

impl Default for ExactOnmConfig {
    fn default() -> Self {
        Self { damping_multiplier: 0.1, regularization: 0.1, switch_threshold: 1.0, singular_threshold: 0.1 }
    }
}

impl ExactOnmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.damping_multiplier > 0.0 && self.damping_multiplier <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "exact.damping_multiplier must lie in (0, 1], got {}",
                self.damping_multiplier
            )));
        }
        if !(self.regularization >= 0.0 && self.singular_threshold >= 0.0) {
            return Err(ModelError::InvalidConfig("exact regularization and thresholds must be nonnegative".into()));
        }
        if self.switch_threshold.is_nan() || self.switch_threshold < self.singular_threshold {
            return Err(ModelError::InvalidConfig(
                "exact.switch_threshold must be at least exact.singular_threshold".into(),
            ));
        }
        Ok(())
    }
}

/// What happened during one estimator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Euclidean norm of the gradient used for the step.
    pub grad_norm: f64,
    /// `lambda_min` of the (unregularized) Hessian, if it was computed.
    pub hess_min_eig: Option<f64>,
    pub damped: bool,
    pub regularized: bool,
}

/// Below this the regularized Hessian is treated as singular.
const DEGENERATE_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ExactOnm {
    config: ExactOnmConfig,
    beta_hat: DVector<f64>,
    history: Vec<StageTerm>,
}

impl ExactOnm {
    pub fn new(beta_0: DVector<f64>, config: ExactOnmConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self { config, beta_hat: beta_0, history: Vec::new() })
    }

    pub fn config(&self) -> &ExactOnmConfig {
        &self.config
    }

    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    pub fn history(&self) -> &[StageTerm] {
        &self.history
    }

    /// Number of measurements ingested; also the index expected next.
    pub fn steps(&self) -> usize {
        self.history.len()
    }

    /// `nabla^2 J_k` at the current estimate.
    pub fn hessian(&self, params: &CostParams) -> DMatrix<f64> {
        total_hessian(params, &self.beta_hat, &self.history)
    }

    /// Ingests one measurement and takes a (possibly damped) Newton step on
    /// the accumulated cost. On error the state is left unchanged.
    pub fn step(&mut self, params: &CostParams, term: StageTerm) -> Result<StepInfo, OnmError> {
        let step = self.history.len();
        if term.measurement.index != step {
            return Err(OnmError::IndexMismatch { expected: step, found: term.measurement.index });
        }
        if term.dim() != self.beta_hat.len() {
            return Err(OnmError::DimensionMismatch { expected: self.beta_hat.len(), found: term.dim() });
        }
        self.history.push(term);
        match self.newton_update(params, step) {
            Ok((beta, info)) => {
                self.beta_hat = beta;
                Ok(info)
            }
            Err(e) => {
                self.history.pop();
                Err(e)
            }
        }
    }

    fn newton_update(&self, params: &CostParams, step: usize) -> Result<(DVector<f64>, StepInfo), OnmError> {
        let cfg = &self.config;
        let g = total_gradient(params, &self.beta_hat, &self.history);
        let mut h = total_hessian(params, &self.beta_hat, &self.history);
        let lambda = min_eigenvalue_unchecked(&h);

        let mut regularized = false;
        let mut effective = lambda;
        if lambda < cfg.singular_threshold {
            h.fill_diagonal_add(cfg.regularization);
            effective += cfg.regularization;
            regularized = true;
        }
        if effective <= DEGENERATE_EIGENVALUE {
            return Err(OnmError::DegenerateHessian { step, min_eigenvalue: effective });
        }
        let direction = match spd_solve(&h, &g) {
            Some(d) => d,
            None => {
                h.fill_diagonal_add(cfg.regularization);
                spd_solve(&h, &g).ok_or(OnmError::DegenerateHessian { step, min_eigenvalue: effective })?
            }
        };
        let damped = lambda < cfg.switch_threshold;
        let s = if damped { cfg.damping_multiplier } else { 1.0 };
        let beta = &self.beta_hat - direction * s;
        if !beta.iter().all(|v| v.is_finite()) {
            return Err(OnmError::NonFinite { step });
        }
        Ok((beta, StepInfo { grad_norm: g.norm(), hess_min_eig: Some(lambda), damped, regularized }))
    }
}

trait FillDiagonalAdd {
    fn fill_diagonal_add(&mut self, v: f64);
}

impl FillDiagonalAdd for DMatrix<f64> {
    fn fill_diagonal_add(&mut self, v: f64) {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] += v;
        }
    }
}

/// Settings for the batch Newton solve of `argmin J_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    /// Stop when `|nabla J|_inf` falls to this level.
    pub grad_tol: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub max_halvings: usize,
    /// Added to the Hessian diagonal so Newton directions are always descent directions.
    pub hessian_floor: f64,
    /// Separable histories have no finite minimizer and the solver walks out
    /// along a ray. For regret, such a run's last iterate is accepted as the
    /// optimum once its gradient is below this level.
    pub ray_grad_tol: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iterations: 100, armijo: 1e-4, max_halvings: 40, hessian_floor: 1e-8, ray_grad_tol: 1e-6 }
    }
}

/// Minimizes the accumulated cost by damped Newton with backtracking.
pub fn batch_optimum(
    params: &CostParams,
    history: &[StageTerm],
    beta_init: &DVector<f64>,
    config: &BatchConfig,
) -> Result<DVector<f64>, BatchNotConverged> {
    let mut beta = beta_init.clone();
    let mut f = total_cost(params, &beta, history);
    let mut g = total_gradient(params, &beta, history);
    for it in 0..config.max_iterations {
        let gnorm = g.amax();
        if gnorm <= config.grad_tol {
            return Ok(beta);
        }
        let mut h = total_hessian(params, &beta, history);
        h.fill_diagonal_add(config.hessian_floor);
        let direction = spd_solve(&h, &(-&g)).unwrap_or_else(|| -&g);
        let slope = g.dot(&direction);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let candidate = &beta + &direction * t;
            let fc = total_cost(params, &candidate, history);
            if fc <= f + config.armijo * t * slope {
                accepted = Some((candidate, fc, None));
                break;
            }
            // Near the optimum the decrease drops below the cost's rounding
            // error; fall back to requiring a smaller gradient.
            if (f - fc).abs() <= 1e-12 * f.abs().max(1.0) {
                let gc = total_gradient(params, &candidate, history);
                if gc.amax() < gnorm {
                    accepted = Some((candidate, fc, Some(gc)));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, fc, gc)) => {
                beta = candidate;
                f = fc;
                g = gc.unwrap_or_else(|| total_gradient(params, &beta, history));
            }
            None => {
                return Err(BatchNotConverged { iterations: it + 1, grad_norm: gnorm, beta });
            }
        }
    }
    let grad_norm = g.amax();
    if grad_norm <= config.grad_tol {
        Ok(beta)
    } else {
        Err(BatchNotConverged { iterations: config.max_iterations, grad_norm, beta })
    }
}

/// Estimates and measurements from a completed online run.
///
/// `estimates[k]` is the estimate in effect when `terms[k]` arrived, i.e. the
/// estimate that is scored against `J_k`.
#[derive(Debug, Clone, Default)]
pub struct OnlineTrace {
    pub estimates: Vec<DVector<f64>>,
    pub terms: Vec<StageTerm>,
}

impl OnlineTrace {
    pub fn len(&self) -> usize {
        self.terms.len().min(self.estimates.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, estimate: DVector<f64>, term: StageTerm) {
        self.estimates.push(estimate);
        self.terms.push(term);
    }
}

/// Per-step regret terms `J_k(beta_hat_k) - J_k(beta*_k)`.
///
/// Each batch solve starts from whichever of `beta_hat_k` and `beta*_{k-1}`
/// has the lower cost, so every term is nonnegative up to rounding.
pub fn regret_terms(
    params: &CostParams,
    trace: &OnlineTrace,
    config: &BatchConfig,
) -> Result<Vec<f64>, BatchNotConverged> {
    let mut out = Vec::with_capacity(trace.len());
    let mut previous_opt: Option<DVector<f64>> = None;
    for k in 0..trace.len() {
        let history = &trace.terms[..=k];
        let estimate = &trace.estimates[k];
        let online_cost = total_cost(params, estimate, history);
        let start = match &previous_opt {
            Some(prev) if total_cost(params, prev, history) < online_cost => prev.clone(),
            _ => estimate.clone(),
        };
        let opt = match batch_optimum(params, history, &start, config) {
            Ok(opt) => opt,
            Err(e) if e.grad_norm <= config.ray_grad_tol => e.beta,
            Err(e) => return Err(e),
        };
        out.push(online_cost - total_cost(params, &opt, history));
        previous_opt = Some(opt);
    }
    Ok(out)
}

/// Partial sums `Reg(T) = sum_{k<=T} (J_k(beta_hat_k) - J_k(beta*_k))`.
pub fn empirical_regret(
    params: &CostParams,
    trace: &OnlineTrace,
    config: &BatchConfig,
) -> Result<Vec<f64>, BatchNotConverged> {
    let terms = regret_terms(params, trace, config)?;
    Ok(terms
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect())
}

/// `lambda_min` of each length-`window` sum of stage Hessians, each taken at
/// the estimate current when its measurement arrived.
pub fn window_min_eigenvalue(params: &CostParams, trace: &OnlineTrace, window: usize) -> Vec<f64> {
    let n = trace.len();
    if window == 0 || n < window {
        return Vec::new();
    }
    let stage: Vec<DMatrix<f64>> =
        (0..n).map(|t| stage_hessian(params, &trace.estimates[t], &trace.terms[t])).collect();
    (0..=n - window)
        .map(|start| {
            let mut sum = stage[start].clone();
            for h in &stage[start + 1..start + window] {
                sum += h;
            }
            min_eigenvalue_unchecked(&sum)
        })
        .collect()
}
