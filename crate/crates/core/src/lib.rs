//! Estimation of a spatial scalar field from binary (thresholded) sensor
//! readings. The field is modeled as a sum of Gaussian radial basis
//! functions whose coefficients are fitted online by logistic regression,
//! using either an exact online Newton's method over the full history or an
//! approximate variant with constant per-step cost. A mobile sensor chooses
//! where to measure next by maximizing the smallest eigenvalue of the
//! expected Hessian.

pub mod cli;
pub mod cost;
pub mod error;
pub mod eval;
pub mod export;
pub mod field;
mod linalg;
pub mod onm_approx;
pub mod onm_exact;
pub mod sensing;

pub use cost::{CostParams, StageTerm};
pub use error::{BatchNotConverged, ModelError, OnmError, SensingError};
pub use eval::{run_batch, run_scenario, summarize, EstimatorKind, EvalGrid, RunRecord, ScenarioConfig, Summary};
pub use field::{AreaOfInterest, FieldModel, GroundTruth, Measurement, RbfBasis, sample_ground_truth, simulate_measurement};
pub use onm_approx::{ApproxOnm, ApproxOnmConfig};
pub use onm_exact::{ExactOnm, ExactOnmConfig, OnlineTrace, StepInfo};
pub use sensing::{SensingConfig, VehicleState};
