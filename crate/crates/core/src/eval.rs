//! Scenario simulation, the probability-field MSE metric and batch
//! summaries.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{total_hessian, CostParams, StageTerm};
use crate::error::{ModelError, OnmError, SensingError};
use crate::field::{probability_from_value, simulate_measurement, AreaOfInterest, FieldModel, GroundTruth, RbfBasis, TruthPrior};
use crate::linalg::min_eigenvalue_unchecked;
use crate::onm_approx::{ApproxOnm, ApproxOnmConfig};
use crate::onm_exact::{ExactOnm, ExactOnmConfig, OnlineTrace, StepInfo};
use crate::sensing::{next_position, select_target_by, SensingConfig, TieBreak, VehicleState};

/// Cell-centered evaluation lattice over the area of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    resolution: usize,
    area: AreaOfInterest,
    points: Vec<Point2<f64>>,
}

impl EvalGrid {
    pub fn new(area: AreaOfInterest, resolution: usize) -> Result<Self, ModelError> {
        area.validate()?;
        if resolution == 0 {
            return Err(ModelError::InvalidConfig("eval.resolution must be at least 1".into()));
        }
        Ok(Self { resolution, area, points: area.lattice(resolution) })
    }

    pub fn from_points(area: AreaOfInterest, points: Vec<Point2<f64>>) -> Self {
        Self { resolution: 0, area, points }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn area(&self) -> &AreaOfInterest {
        &self.area
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self::new(AreaOfInterest::default(), 32).expect("default grid is valid")
    }
}

/// Mean squared difference between the truth's and the estimate's detection
/// probabilities over the grid. Both use the truth's noise level and threshold.
pub fn mse_probability_field(truth: &GroundTruth, estimate: &FieldModel, grid: &EvalGrid) -> f64 {
    let sd = truth.noise_std();
    let tau = truth.threshold();
    let sum: f64 = grid
        .points()
        .iter()
        .map(|x| {
            let a = probability_from_value(truth.model().value(x), sd, tau);
            let b = probability_from_value(estimate.value(x), sd, tau);
            (a - b) * (a - b)
        })
        .sum();
    sum / grid.len() as f64
}

/// Precomputed form of [`mse_probability_field`] for a fixed truth and basis.
#[derive(Debug, Clone)]
pub struct MseEvaluator {
    truth_probs: DVector<f64>,
    /// Row `j` is `K(x_j)'` for the estimator basis.
    kernels: DMatrix<f64>,
    noise_std: f64,
    threshold: f64,
}

impl MseEvaluator {
    pub fn new(truth: &GroundTruth, basis: &RbfBasis, grid: &EvalGrid) -> Self {
        let n = grid.len();
        let mut kernels = DMatrix::zeros(n, basis.len());
        for (j, x) in grid.points().iter().enumerate() {
            kernels.row_mut(j).copy_from(&basis.kernel_vector(x).transpose());
        }
        let truth_probs = DVector::from_iterator(n, grid.points().iter().map(|x| truth.detection_probability(x)));
        Self { truth_probs, kernels, noise_std: truth.noise_std(), threshold: truth.threshold() }
    }

    pub fn mse(&self, beta: &DVector<f64>) -> f64 {
        let phi = &self.kernels * beta;
        let n = phi.len();
        let sum: f64 = phi
            .iter()
            .zip(self.truth_probs.iter())
            .map(|(&v, &a)| {
                let b = probability_from_value(v, self.noise_std, self.threshold);
                (a - b) * (a - b)
            })
            .sum();
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Exact,
    Approx,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::Approx => "approx",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(EstimatorKind::Exact),
            "approx" => Ok(EstimatorKind::Approx),
            other => Err(format!("unknown estimator `{other}` (expected exact or approx)")),
        }
    }
}

/// Estimator basis: a square grid of equal-width kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGridConfig {
    pub per_axis: usize,
    pub length_scale: f64,
}

impl Default for ModelGridConfig {
    fn default() -> Self {
        Self { per_axis: 4, length_scale: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    /// The estimator's kernel centers.
    Centers,
    /// A cell-centered lattice of `candidate_grid^2` points.
    Grid,
    /// The explicit `candidate_points` list.
    Points,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingSettings {
    pub step: f64,
    pub alpha: f64,
    pub candidates: CandidateKind,
    pub candidate_grid: usize,
    pub candidate_points: Vec<[f64; 2]>,
    pub tie_break: TieBreak,
}

impl Default for SensingSettings {
    fn default() -> Self {
        Self { step: 5.0, alpha: 0.4, candidates: CandidateKind::Centers, candidate_grid: 8, candidate_points: Vec::new(), tie_break: TieBreak::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub steps: usize,
    /// Defaults to the center of the area.
    pub initial_position: Option<[f64; 2]>,
    /// Each component of the initial estimate is drawn from this range.
    pub initial_estimate_range: (f64, f64),
    /// Record an [`OnlineTrace`] for regret diagnostics.
    pub track_regret: bool,
    pub area: AreaOfInterest,
    pub cost: CostParams,
    pub model: ModelGridConfig,
    pub truth: TruthPrior,
    pub exact: ExactOnmConfig,
    pub approx: ApproxOnmConfig,
    pub sensing: SensingSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub resolution: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { resolution: 32 }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            estimator: EstimatorKind::Approx,
            steps: 1000,
            initial_position: None,
            initial_estimate_range: (0.0, 1.0),
            track_regret: false,
            area: AreaOfInterest::default(),
            cost: CostParams::default(),
            model: ModelGridConfig::default(),
            truth: TruthPrior::default(),
            exact: ExactOnmConfig::default(),
            approx: ApproxOnmConfig::default(),
            sensing: SensingSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.area.validate()?;
        self.cost.validate()?;
        self.truth.validate()?;
        self.exact.validate()?;
        self.approx.validate()?;
        if self.model.per_axis == 0 {
            return Err(ModelError::InvalidConfig("model.per_axis must be at least 1".into()));
        }
        let (lo, hi) = self.initial_estimate_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidRange("initial_estimate_range"));
        }
        if let Some([x, y]) = self.initial_position {
            if !self.area.contains(&Point2::new(x, y)) {
                return Err(ModelError::InvalidConfig("initial_position lies outside the area".into()));
            }
        }
        self.basis()?;
        self.sensing_config()?.validate()?;
        EvalGrid::new(self.area, self.eval.resolution)?;
        Ok(())
    }

    pub fn basis(&self) -> Result<RbfBasis, ModelError> {
        RbfBasis::grid(&self.area, self.model.per_axis, self.model.length_scale)
    }

    pub fn sensing_config(&self) -> Result<SensingConfig, ModelError> {
        let s = &self.sensing;
        let candidates = match s.candidates {
            CandidateKind::Centers => self.basis()?.centers().to_vec(),
            CandidateKind::Grid => self.area.lattice(s.candidate_grid),
            CandidateKind::Points => s.candidate_points.iter().map(|&[x, y]| Point2::new(x, y)).collect(),
        };
        SensingConfig::new(candidates, s.step, s.alpha, self.area)
    }

    pub fn initial_position(&self) -> Point2<f64> {
        self.initial_position.map(|[x, y]| Point2::new(x, y)).unwrap_or_else(|| self.area.center())
    }

    pub fn grid(&self) -> Result<EvalGrid, ModelError> {
        EvalGrid::new(self.area, self.eval.resolution)
    }

    /// Ground truth and initial estimate for this seed. Both estimators see
    /// the same pair for the same seed.
    pub fn draw_scenario(&self) -> Result<(GroundTruth, DVector<f64>), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let truth = self.truth.sample(&self.area, &mut rng)?;
        let p = self.model.per_axis * self.model.per_axis;
        let (lo, hi) = self.initial_estimate_range;
        let init = Uniform::new(lo, hi).map_err(|_| ModelError::InvalidRange("initial_estimate_range"))?;
        let beta0 = DVector::from_iterator(p, (0..p).map(|_| rng.sample(init)));
        Ok((truth, beta0))
    }

    fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// One row of the estimate trace: the estimate after `k` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub beta: DVector<f64>,
    pub grad_norm: Option<f64>,
    pub hess_min_eig: Option<f64>,
    pub damped: bool,
}

/// Where measurement `k` was taken and which target was chosen after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub k: usize,
    pub position: Point2<f64>,
    pub target: Point2<f64>,
    pub lambda_min: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario_id: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub truth: GroundTruth,
    pub estimate: FieldModel,
    pub final_mse: f64,
    /// MSE after `k` measurements, starting with the initial estimate.
    pub mse_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub waypoints: Vec<Waypoint>,
    /// Wall time of each estimator update, excluding sensing.
    pub step_times: Vec<Duration>,
    /// Estimator plus sensing time over the whole run.
    pub wall_time_s: f64,
    pub aborted: Option<String>,
    pub online_trace: Option<OnlineTrace>,
}

impl RunRecord {
    pub fn measurements(&self) -> usize {
        self.mse_trace.len().saturating_sub(1)
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }
}

enum Estimator {
    Exact(ExactOnm),
    Approx(ApproxOnm),
}

impl Estimator {
    fn beta_hat(&self) -> &DVector<f64> {
        match self {
            Estimator::Exact(e) => e.beta_hat(),
            Estimator::Approx(a) => a.beta_hat(),
        }
    }

    fn step(&mut self, params: &CostParams, term: StageTerm) -> Result<StepInfo, OnmError> {
        match self {
            Estimator::Exact(e) => e.step(params, term),
            Estimator::Approx(a) => a.step(params, &term),
        }
    }

    /// Hessian used for candidate scoring.
    fn sensing_hessian(&self, params: &CostParams) -> DMatrix<f64> {
        match self {
            Estimator::Exact(e) => total_hessian(params, e.beta_hat(), e.history()),
            Estimator::Approx(a) => a.hessian(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum Abort {
    #[error(transparent)]
    Estimator(#[from] OnmError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
}

/// Simulates one closed-loop run: measure, update the estimate, choose and
/// move toward the next location.
pub fn run_scenario(config: &ScenarioConfig, scenario_id: usize) -> Result<RunRecord, ModelError> {
    config.validate()?;
    let params = config.cost;
    let basis = config.basis()?;
    let sensing = config.sensing_config()?;
    let grid = config.grid()?;
    let (truth, beta0) = config.draw_scenario()?;
    let mut noise = config.noise_rng();
    let evaluator = MseEvaluator::new(&truth, &basis, &grid);
    let candidate_kernels: Vec<DVector<f64>> = sensing.candidates.iter().map(|c| basis.kernel_vector(c)).collect();

    let mut estimator = match config.estimator {
        EstimatorKind::Exact => Estimator::Exact(ExactOnm::new(beta0.clone(), config.exact)?),
        EstimatorKind::Approx => Estimator::Approx(ApproxOnm::new(beta0.clone(), config.approx)?),
    };
    let initial_hess = match config.estimator {
        EstimatorKind::Exact => None,
        EstimatorKind::Approx => Some(1.0 / config.approx.epsilon),
    };

    let n = config.steps;
    let mut mse_trace = Vec::with_capacity(n + 1);
    let mut trace = Vec::with_capacity(n + 1);
    let mut waypoints = Vec::with_capacity(n);
    let mut step_times = Vec::with_capacity(n);
    let mut online_trace = config.track_regret.then(OnlineTrace::default);
    let mut busy = Duration::ZERO;
    let mut aborted = None;

    mse_trace.push(evaluator.mse(&beta0));
    trace.push(TraceRow { k: 0, beta: beta0, grad_norm: None, hess_min_eig: initial_hess, damped: false });
    let mut vehicle = VehicleState::at(config.initial_position());

    for k in 0..n {
        let measurement = simulate_measurement(&truth, vehicle.position, k, &mut noise);
        let before = online_trace.as_ref().map(|_| estimator.beta_hat().clone());

        let outcome: Result<(StepInfo, Option<f64>), Abort> = (|| {
            let started = Instant::now();
            let term = StageTerm::new(&basis, measurement);
            let kept = before.as_ref().map(|_| term.clone());
            let info = estimator.step(&params, term)?;
            let step_time = started.elapsed();
            step_times.push(step_time);

            let sense_started = Instant::now();
            let h = estimator.sensing_hessian(&params);
            let selection =
                select_target_by(&h, estimator.beta_hat(), &params, &sensing.candidates, &candidate_kernels, config.sensing.tie_break)?;
            let (next, heading): (Point2<f64>, Vector2<f64>) = next_position(&vehicle, &selection.target, &sensing)?;
            busy += step_time + sense_started.elapsed();

            if let (Some(tr), Some(b), Some(t)) = (online_trace.as_mut(), before.clone(), kept) {
                tr.push(b, t);
            }
            waypoints.push(Waypoint { k, position: vehicle.position, target: selection.target, lambda_min: selection.lambda_min });
            vehicle = VehicleState { position: next, prev_direction: Some(heading) };
            let hess_min_eig = match info.hess_min_eig {
                Some(l) => Some(l),
                None => Some(min_eigenvalue_unchecked(&h)),
            };
            Ok((info, hess_min_eig))
        })();

        match outcome {
            Ok((info, hess_min_eig)) => {
                let beta = estimator.beta_hat().clone();
                mse_trace.push(evaluator.mse(&beta));
                trace.push(TraceRow { k: k + 1, beta, grad_norm: Some(info.grad_norm), hess_min_eig, damped: info.damped });
            }
            Err(e) => {
                // A sensing failure happens after the estimator step.
                if matches!(e, Abort::Sensing(_)) {
                    let beta = estimator.beta_hat().clone();
                    mse_trace.push(evaluator.mse(&beta));
                    trace.push(TraceRow { k: k + 1, beta, grad_norm: None, hess_min_eig: None, damped: false });
                }
                aborted = Some(format!("step {k}: {e}"));
                break;
            }
        }
    }

    let estimate = FieldModel::new(basis, estimator.beta_hat().clone())?;
    Ok(RunRecord {
        scenario_id,
        seed: config.seed,
        estimator: config.estimator,
        truth,
        estimate,
        final_mse: *mse_trace.last().expect("initial MSE is always recorded"),
        mse_trace,
        trace,
        waypoints,
        step_times,
        wall_time_s: busy.as_secs_f64(),
        aborted,
        online_trace,
    })
}

/// Runs `n` scenarios with seeds `base.seed + i` on up to `workers` threads.
/// Results are returned in scenario order.
pub fn run_batch(base: &ScenarioConfig, n: usize, workers: usize) -> Result<Vec<RunRecord>, ModelError> {
    base.validate()?;
    let configs: Vec<ScenarioConfig> =
        (0..n).map(|i| ScenarioConfig { seed: base.seed.wrapping_add(i as u64), ..base.clone() }).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ModelError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| configs.par_iter().enumerate().map(|(i, cfg)| run_scenario(cfg, i)).collect())
}

/// Order statistics of final MSE over completed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub completed: usize,
    pub aborted: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
    pub mean_time_s: f64,
}

impl Summary {
    pub fn completion_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.completed as f64 / self.runs as f64
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize_values(values: &[f64], runs: usize, mean_time_s: f64) -> Summary {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    Summary {
        runs,
        completed: sorted.len(),
        aborted: runs - sorted.len(),
        median: quantile(&sorted, 0.5),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        max: sorted.last().copied().unwrap_or(f64::NAN),
        q1,
        q3,
        whisker_lo: inside().next().unwrap_or(f64::NAN),
        whisker_hi: inside().next_back().unwrap_or(f64::NAN),
        outliers: sorted.iter().copied().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect(),
        mean_time_s,
    }
}

/// Summary over completed runs; aborted runs are only counted.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let done: Vec<&RunRecord> = records.iter().filter(|r| !r.is_aborted()).collect();
    let values: Vec<f64> = done.iter().map(|r| r.final_mse).collect();
    let mean_time = if done.is_empty() {
        f64::NAN
    } else {
        done.iter().map(|r| r.wall_time_s).sum::<f64>() / done.len() as f64
    };
    summarize_values(&values, records.len(), mean_time)
}
