//! Active sensing: pick the candidate location that maximizes the smallest
//! eigenvalue of the expected Hessian, then move a limited distance toward it
//! along a smoothed heading.

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cost::{add_scaled_outer, logistic_curvature, CostParams};
use crate::error::{ModelError, SensingError};
use crate::field::{AreaOfInterest, RbfBasis};

pub use crate::linalg::min_eigenvalue;

/// Two candidates whose scores differ by less than this are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SensingConfig {
    pub candidates: Vec<Point2<f64>>,
    /// Travel distance per measurement (meters).
    pub step: f64,
    /// Weight of the new heading in the smoothed direction.
    pub alpha: f64,
    pub area: AreaOfInterest,
}

impl SensingConfig {
    pub fn new(candidates: Vec<Point2<f64>>, step: f64, alpha: f64, area: AreaOfInterest) -> Result<Self, ModelError> {
        let cfg = Self { candidates, step, alpha, area };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.candidates.is_empty() {
            return Err(ModelError::InvalidConfig("sensing needs at least one candidate".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(ModelError::NonPositive { what: "sensing.step", value: self.step });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::InvalidConfig(format!("sensing.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.area.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Point2<f64>,
    /// Smoothed heading from the previous move; unit length when present.
    pub prev_direction: Option<Vector2<f64>>,
}

impl VehicleState {
    pub fn at(position: Point2<f64>) -> Self {
        Self { position, prev_direction: None }
    }
}

/// Curvature `eta^2 e^y / (1 + e^y)^2`, `y = eta (beta' K - tau)`, that a
/// measurement taken with kernel vector `kernel` would contribute. It does not
/// depend on the measurement outcome.
pub fn prospective_curvature(params: &CostParams, beta_hat: &DVector<f64>, kernel: &DVector<f64>) -> f64 {
    let y = params.eta * (beta_hat.dot(kernel) - params.tau);
    params.eta * params.eta * logistic_curvature(y)
}

/// `H + s K(x') K(x')'` for a prospective measurement at `x_cand`.
pub fn expected_hessian(
    h: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    params: &CostParams,
    basis: &RbfBasis,
    x_cand: &Point2<f64>,
) -> DMatrix<f64> {
    expected_hessian_for_kernel(h, beta_hat, params, &basis.kernel_vector(x_cand))
}

pub fn expected_hessian_for_kernel(
    h: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    params: &CostParams,
    kernel: &DVector<f64>,
) -> DMatrix<f64> {
    let mut out = h.clone();
    add_scaled_outer(&mut out, prospective_curvature(params, beta_hat, kernel), kernel);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub target: Point2<f64>,
    pub lambda_min: f64,
    /// `lambda_min` of the expected Hessian for every candidate, in order.
    pub scores: Vec<f64>,
}

/// Scores every candidate by `lambda_min` of its expected Hessian and returns
/// the best one; ties go to the lowest index.
pub fn select_target(
    h: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    params: &CostParams,
    basis: &RbfBasis,
    candidates: &[Point2<f64>],
) -> Result<Selection, SensingError> {
    let kernels: Vec<DVector<f64>> = candidates.iter().map(|c| basis.kernel_vector(c)).collect();
    select_target_with_kernels(h, beta_hat, params, candidates, &kernels)
}

/// [`select_target`] with the candidates' kernel vectors precomputed.
pub fn select_target_with_kernels(
    h: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    params: &CostParams,
    candidates: &[Point2<f64>],
    kernels: &[DVector<f64>],
) -> Result<Selection, SensingError> {
    if candidates.is_empty() {
        return Err(SensingError::NoCandidates);
    }
    if h.nrows() != h.ncols() {
        return Err(SensingError::NotSquare(h.nrows(), h.ncols()));
    }
    select_target_by(h, beta_hat, params, candidates, kernels, TieBreak::LowestIndex)
}

/// How candidates with equal `lambda_min` (within [`TIE_TOLERANCE`]) are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// First candidate in list order.
    LowestIndex,
    /// Compare the remaining eigenvalues in ascending order, then list order.
    #[default]
    Leximin,
}

/// Candidate selection with an explicit tie-break rule.
pub fn select_target_by(
    h: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    params: &CostParams,
    candidates: &[Point2<f64>],
    kernels: &[DVector<f64>],
    tie_break: TieBreak,
) -> Result<Selection, SensingError> {
    if candidates.is_empty() {
        return Err(SensingError::NoCandidates);
    }
    if h.nrows() != h.ncols() {
        return Err(SensingError::NotSquare(h.nrows(), h.ncols()));
    }
    let mut scratch = h.clone();
    let spectra: Vec<Vec<f64>> = kernels
        .iter()
        .map(|k| {
            scratch.copy_from(h);
            add_scaled_outer(&mut scratch, prospective_curvature(params, beta_hat, k), k);
            let mut ev: Vec<f64> = scratch.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        })
        .collect();
    let scores: Vec<f64> = spectra.iter().map(|ev| ev[0]).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut index = scores.iter().position(|&s| s >= best - TIE_TOLERANCE).unwrap_or(0);
    if tie_break == TieBreak::Leximin {
        for (j, ev) in spectra.iter().enumerate().skip(index + 1) {
            if scores[j] >= best - TIE_TOLERANCE && leximin_greater(ev, &spectra[index]) {
                index = j;
            }
        }
    }
    Ok(Selection { index, target: candidates[index], lambda_min: scores[index], scores })
}

/// `a` beats `b` at the first eigenvalue (after the smallest) where they differ
/// by more than the tie tolerance.
fn leximin_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b).skip(1) {
        let tol = TIE_TOLERANCE * x.abs().max(y.abs()).max(1.0);
        if (x - y).abs() > tol {
            return x > y;
        }
    }
    false
}

/// Moves `config.step` toward `target` along the heading
/// `normalize(alpha d + (1 - alpha) d_prev)`, clamped to the area.
pub fn next_position(
    vehicle: &VehicleState,
    target: &Point2<f64>,
    config: &SensingConfig,
) -> Result<(Point2<f64>, Vector2<f64>), SensingError> {
    let offset = target - vehicle.position;
    let distance = offset.norm();
    let heading = if distance > 0.0 {
        let d = offset / distance;
        match vehicle.prev_direction {
            Some(prev) => {
                let blended = d * config.alpha + prev * (1.0 - config.alpha);
                let n = blended.norm();
                // exactly opposing headings with alpha = 1/2 cancel out
                if n > 1e-12 {
                    blended / n
                } else {
                    d
                }
            }
            None => d,
        }
    } else {
        vehicle.prev_direction.ok_or(SensingError::DegenerateTarget)?
    };
    let next = config.area.clamp(vehicle.position + heading * config.step);
    Ok((next, heading))
}
