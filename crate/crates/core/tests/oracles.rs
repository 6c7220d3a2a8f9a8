//! Library results checked against independent reference computations.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Point2, Vector2};
use onm_field::cost::{stage_cost, stage_gradient, stage_hessian, stage_hessian_scale, total_cost, total_gradient, total_hessian};
use onm_field::eval::{mse_probability_field, EvalGrid};
use onm_field::field::{detection_probability, sample_ground_truth, simulate_measurement, standard_normal_cdf, TruthPrior};
use onm_field::onm_exact::{batch_optimum, empirical_regret, window_min_eigenvalue, BatchConfig};
use onm_field::sensing::{expected_hessian_for_kernel, min_eigenvalue, next_position, select_target, SensingConfig};
use onm_field::*;
use rand::Rng;

#[test]
fn kernel_vector_on_the_paper_grid() {
    let basis = paper_basis();
    let k = basis.kernel_vector(&Point2::new(50.0, 50.0));
    let coords = [12.5, 37.5, 62.5, 87.5];
    let mut i = 0;
    for &cy in &coords {
        for &cx in &coords {
            let want = kernel_scalar((cx, cy), 25.0, (50.0, 50.0));
            assert!((k[i] - want).abs() <= 1e-15 * want, "entry {i}: {} vs {want}", k[i]);
            i += 1;
        }
    }
    // the four inner centers sit at distance 12.5*sqrt(2)
    assert!((k[5] - (-0.5f64).exp()).abs() < 1e-15);
}

#[test]
fn field_value_matches_brute_force_sum() {
    let mut r = rng(11);
    for _ in 0..20 {
        let truth = TruthPrior::default().sample(&AreaOfInterest::default(), &mut r).unwrap();
        let m = truth.model();
        let x = random_point(&mut r);
        let mut want = 0.0;
        for i in 0..m.p() {
            let c = m.basis().centers()[i];
            want += m.coefficients()[i] * kernel_scalar((c.x, c.y), m.basis().length_scales()[i], (x.x, x.y));
        }
        assert!((m.value(&x) - want).abs() <= 1e-12 * want.abs());
    }
}

#[test]
fn detection_probability_matches_monte_carlo() {
    let mut r = rng(5);
    let truth = sample_ground_truth(&AreaOfInterest::default(), &mut r).unwrap();
    let n = 100_000;
    for i in 0..5 {
        let x = random_point(&mut r);
        let p = truth.detection_probability(&x);
        let hits = (0..n).filter(|_| simulate_measurement(&truth, x, i, &mut r).detected()).count();
        let freq = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se + 1e-12, "x={x:?} p={p} freq={freq}");
        assert_eq!(p, detection_probability(truth.model(), truth.noise_std(), truth.threshold(), &x));
    }
}

#[test]
fn normal_cdf_symmetry() {
    for &x in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        assert!((standard_normal_cdf(x) + standard_normal_cdf(-x) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn stage_cost_matches_naive_formula() {
    let basis = paper_basis();
    let mut r = rng(1);
    for k in 0..100 {
        let params = CostParams::new(if k % 2 == 0 { 5.0 } else { 1.0 }, 1.0).unwrap();
        let beta = random_vector(&mut r, 16, 0.0, 1.5);
        let term = random_term(&mut r, &basis, 0);
        let want = naive_stage_cost(params.eta, params.tau, beta.as_slice(), term.kernel.as_slice(), term.measurement.detected());
        assert!((stage_cost(&params, &beta, &term) - want).abs() <= 1e-12 * want.max(1e-300));
    }
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let basis = paper_basis();
    let mut r = rng(2);
    for k in 0..100 {
        let params = CostParams::new(if k % 2 == 0 { 5.0 } else { 1.0 }, 1.0).unwrap();
        let beta = random_vector(&mut r, 16, 0.0, 1.5);
        let term = random_term(&mut r, &basis, 0);
        let g = stage_gradient(&params, &beta, &term);
        let g_fd = fd_gradient(|b| stage_cost(&params, b, &term), &beta, 1e-6);
        assert!(rel_err_vec(&g_fd, &g) <= 1e-5, "gradient draw {k}: {}", rel_err_vec(&g_fd, &g));
        let h = stage_hessian(&params, &beta, &term);
        let h_fd = fd_jacobian(|b| stage_gradient(&params, b, &term), &beta, 1e-6);
        assert!(rel_err_mat(&h_fd, &h) <= 1e-4, "hessian draw {k}: {}", rel_err_mat(&h_fd, &h));
    }
}

#[test]
fn total_hessian_min_eigenvalue_matches_jacobi() {
    let basis = paper_basis();
    let mut r = rng(3);
    let params = CostParams::default();
    let beta = random_vector(&mut r, 16, 0.0, 1.0);
    let history: Vec<StageTerm> = (0..20).map(|i| random_term(&mut r, &basis, i)).collect();
    let h = total_hessian(&params, &beta, &history);
    let lib = min_eigenvalue(&h).unwrap();
    let oracle = jacobi_min(&h);
    assert!((lib - oracle).abs() <= 1e-9, "{lib} vs {oracle}");
}

#[test]
fn min_eigenvalue_has_small_residual() {
    let mut r = rng(4);
    for _ in 0..10 {
        let a = DMatrix::from_fn(16, 16, |_, _| r.random_range(-1.0..1.0));
        let m = (&a + a.transpose()) * 0.5;
        let lambda = min_eigenvalue(&m).unwrap();
        // inverse iteration with a slightly shifted matrix recovers the eigenvector
        let shifted = &m - DMatrix::identity(16, 16) * (lambda - 1e-8);
        let lu = shifted.lu();
        let mut v = DVector::from_element(16, 1.0).normalize();
        for _ in 0..5 {
            v = lu.solve(&v).unwrap().normalize();
        }
        let residual = (&m * &v - &v * lambda).norm();
        assert!(residual <= 1e-9, "residual {residual}");
        assert!((lambda - jacobi_min(&m)).abs() <= 1e-10);
    }
}

fn synthetic_history(basis: &RbfBasis, truth: &GroundTruth, n: usize, seed: u64) -> Vec<StageTerm> {
    let mut r = rng(seed);
    (0..n).map(|i| StageTerm::new(basis, simulate_measurement(truth, random_point(&mut r), i, &mut r))).collect()
}

fn small_truth(seed: u64) -> GroundTruth {
    let mut r = rng(seed);
    sample_ground_truth(&AreaOfInterest::default(), &mut r).unwrap()
}

#[test]
fn exact_iterate_is_near_the_batch_optimum() {
    let basis = RbfBasis::new(vec![Point2::new(30.0, 50.0), Point2::new(70.0, 50.0)], vec![40.0; 2]).unwrap();
    let truth = small_truth(21);
    let history = synthetic_history(&basis, &truth, 30, 22);
    let params = CostParams::default();
    let mut onm = ExactOnm::new(DVector::from_vec(vec![0.5, 0.5]), ExactOnmConfig::default()).unwrap();
    for t in &history {
        onm.step(&params, t.clone()).unwrap();
    }
    let config = BatchConfig { max_iterations: 3, ..BatchConfig::default() };
    let opt = batch_optimum(&params, &history, onm.beta_hat(), &config).expect("converges in three iterations");
    assert!(total_gradient(&params, &opt, &history).amax() <= 1e-8);
}

#[test]
fn batch_optimum_beats_random_probes() {
    let basis = RbfBasis::new(
        vec![Point2::new(20.0, 20.0), Point2::new(80.0, 30.0), Point2::new(50.0, 80.0)],
        vec![35.0; 3],
    )
    .unwrap();
    let truth = small_truth(31);
    let history = synthetic_history(&basis, &truth, 50, 32);
    let params = CostParams::default();
    let opt = batch_optimum(&params, &history, &DVector::from_element(3, 0.5), &BatchConfig::default()).unwrap();
    let best = total_cost(&params, &opt, &history);
    let mut r = rng(33);
    for _ in 0..1000 {
        let probe = &opt + random_vector(&mut r, 3, -1.0, 1.0);
        assert!(best <= total_cost(&params, &probe, &history));
    }
    // fixed point: a further Newton step barely moves
    let h = total_hessian(&params, &opt, &history);
    let step = h.cholesky().unwrap().solve(&total_gradient(&params, &opt, &history));
    assert!(step.norm() < 1e-6);
}

fn active_config(seed: u64, per_axis: usize, length_scale: f64, steps: usize, kind: EstimatorKind) -> ScenarioConfig {
    let mut c = ScenarioConfig { seed, steps, estimator: kind, track_regret: true, ..ScenarioConfig::default() };
    c.model.per_axis = per_axis;
    c.model.length_scale = length_scale;
    c
}

#[test]
fn regret_rate_decreases() {
    let config = active_config(41, 2, 35.0, 50, EstimatorKind::Exact);
    let record = run_scenario(&config, 0).unwrap();
    assert!(!record.is_aborted());
    let trace = record.online_trace.as_ref().unwrap();
    let reg = empirical_regret(&CostParams::default(), trace, &BatchConfig::default()).unwrap();
    assert_eq!(reg.len(), 50);
    assert!(reg.iter().all(|r| r.is_finite()));
    assert!(reg[49] / 50.0 < reg[9] / 10.0, "Reg(10)={} Reg(50)={}", reg[9], reg[49]);
}

#[test]
fn active_sensing_excites_more_than_standing_still() {
    let params = CostParams::default();
    let config = active_config(51, 4, 25.0, 300, EstimatorKind::Approx);
    let active = run_scenario(&config, 0).unwrap();
    let active_trace = active.online_trace.as_ref().unwrap();

    let basis = config.basis().unwrap();
    let (truth, beta0) = config.draw_scenario().unwrap();
    let mut onm = ApproxOnm::new(beta0, ApproxOnmConfig::default()).unwrap();
    let mut r = rng(52);
    let mut fixed = onm_exact::OnlineTrace::default();
    let x = config.initial_position();
    for k in 0..300 {
        let term = StageTerm::new(&basis, simulate_measurement(&truth, x, k, &mut r));
        let before = onm.beta_hat().clone();
        onm.step(&params, &term).unwrap();
        fixed.push(before, term);
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let a = median(window_min_eigenvalue(&params, active_trace, 64));
    let f = median(window_min_eigenvalue(&params, &fixed, 64));
    assert!(a > f, "active {a} vs fixed {f}");
}

#[test]
fn scalar_inverse_closed_form() {
    let basis = RbfBasis::new(vec![Point2::new(50.0, 50.0)], vec![30.0]).unwrap();
    let params = CostParams::default();
    let mut r = rng(61);
    let mut onm = ApproxOnm::new(DVector::from_vec(vec![0.8]), ApproxOnmConfig::default()).unwrap();
    let mut info = 1.0 / 0.1;
    for i in 0..10 {
        let term = random_term(&mut r, &basis, i);
        info += stage_hessian_scale(&params, onm.beta_hat(), &term) * term.kernel[0] * term.kernel[0];
        onm.step(&params, &term).unwrap();
        let p = onm.inv_hessian()[(0, 0)];
        assert!((p - 1.0 / info).abs() <= 1e-14 * p, "step {i}");
    }
}

#[test]
fn maintained_inverse_matches_dense_inverse() {
    let basis = paper_basis();
    let params = CostParams::default();
    let mut r = rng(71);
    let mut onm = ApproxOnm::new(random_vector(&mut r, 16, 0.0, 1.0), ApproxOnmConfig::default()).unwrap();
    let mut h = DMatrix::identity(16, 16) * 10.0;
    let mut last_min = f64::INFINITY;
    for i in 0..50 {
        let term = random_term(&mut r, &basis, i);
        h += stage_hessian(&params, onm.beta_hat(), &term);
        onm.step(&params, &term).unwrap();
        let direct = dense_inverse(&h);
        assert!(rel_err_mat(onm.inv_hessian(), &direct) <= 1e-8, "step {i}");
        let m = jacobi_min(onm.inv_hessian());
        assert!(m <= last_min * (1.0 + 1e-12), "lambda_min(P) rose at step {i}");
        last_min = m;
    }
}

#[test]
fn expected_hessian_equals_two_branch_average() {
    let basis = paper_basis();
    let params = CostParams::default();
    let mut r = rng(81);
    for _ in 0..100 {
        let h = random_spd(&mut r, 16, 0.1);
        let beta = random_vector(&mut r, 16, 0.0, 1.5);
        let x = random_point(&mut r);
        let prob = r.random_range(0.0..=1.0);
        let up = StageTerm::new(&basis, Measurement::new(x, true, 0));
        let down = StageTerm::new(&basis, Measurement::new(x, false, 0));
        let two_branch = &h + stage_hessian(&params, &beta, &up) * prob + stage_hessian(&params, &beta, &down) * (1.0 - prob);
        let simplified = expected_hessian_for_kernel(&h, &beta, &params, &up.kernel);
        assert!((two_branch - simplified).amax() <= 1e-12 * h.amax().max(1.0));
    }
}

fn candidate_scores(h: &DMatrix<f64>, beta: &DVector<f64>, params: &CostParams, basis: &RbfBasis, cands: &[Point2<f64>]) -> Vec<f64> {
    cands
        .iter()
        .map(|c| jacobi_min(&expected_hessian_for_kernel(h, beta, params, &basis.kernel_vector(c))))
        .collect()
}

#[test]
fn selection_attains_the_exhaustive_maximum() {
    let basis = paper_basis();
    let params = CostParams::default();
    let mut r = rng(91);
    for _ in 0..20 {
        let h = random_spd(&mut r, 16, 0.01);
        let beta = random_vector(&mut r, 16, 0.0, 1.0);
        let cands: Vec<Point2<f64>> = (0..16).map(|_| random_point(&mut r)).collect();
        let sel = select_target(&h, &beta, &params, &basis, &cands).unwrap();
        let oracle = candidate_scores(&h, &beta, &params, &basis, &cands);
        let best = oracle.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(oracle[sel.index] >= best - 1e-10);
    }
}

#[test]
fn near_null_direction_is_filled() {
    let basis = paper_basis();
    let params = CostParams::default();
    let cands: Vec<Point2<f64>> = basis.centers().to_vec();
    // equal margins: beta' K(c_i) = tau at every candidate
    let gram = DMatrix::from_fn(16, 16, |i, j| basis.kernel_vector(&cands[i])[j]);
    let beta = gram.lu().solve(&DVector::from_element(16, params.tau)).unwrap();
    let j = 9;
    let kj = basis.kernel_vector(&cands[j]).normalize();
    let h = DMatrix::identity(16, 16) - &kj * kj.transpose() * (1.0 - 1e-6);
    let sel = select_target(&h, &beta, &params, &basis, &cands).unwrap();
    assert_eq!(sel.index, j);
    let oracle = candidate_scores(&h, &beta, &params, &basis, &cands);
    let best = (0..16).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
    assert_eq!(best, j);
}

#[test]
fn smoothed_heading_hand_example() {
    let config = SensingConfig::new(vec![Point2::new(0.0, 0.0)], 5.0, 0.4, AreaOfInterest::default()).unwrap();
    let vehicle = VehicleState { position: Point2::new(0.0, 50.0), prev_direction: Some(Vector2::new(0.0, 1.0)) };
    let (next, heading) = next_position(&vehicle, &Point2::new(100.0, 50.0), &config).unwrap();
    let n = (0.4f64 * 0.4 + 0.6 * 0.6).sqrt();
    assert!((heading.x - 0.4 / n).abs() < 1e-12 && (heading.y - 0.6 / n).abs() < 1e-12);
    assert!((next.x - 5.0 * 0.4 / n).abs() < 1e-12 && (next.y - (50.0 + 5.0 * 0.6 / n)).abs() < 1e-12);
    assert!((next.x - 2.7735).abs() < 1e-4 && (next.y - 54.1603).abs() < 1e-4);
}

#[test]
fn mse_on_a_hand_grid() {
    let area = AreaOfInterest::default();
    let truth_model = FieldModel::from_parts(vec![Point2::new(50.0, 50.0)], vec![30.0], vec![1.2]).unwrap();
    let truth = GroundTruth::new(truth_model, 0.1, 1.0).unwrap();
    let estimate = FieldModel::from_parts(vec![Point2::new(40.0, 60.0)], vec![20.0], vec![1.0]).unwrap();
    let pts = vec![Point2::new(50.0, 50.0), Point2::new(10.0, 90.0), Point2::new(45.0, 55.0)];
    let grid = EvalGrid::from_points(area, pts.clone());
    let sd = 0.1f64.sqrt();
    let mut want = 0.0;
    for x in &pts {
        let a = standard_normal_cdf((1.2 * kernel_scalar((50.0, 50.0), 30.0, (x.x, x.y)) - 1.0) / sd);
        let b = standard_normal_cdf((kernel_scalar((40.0, 60.0), 20.0, (x.x, x.y)) - 1.0) / sd);
        want += (a - b) * (a - b);
    }
    want /= 3.0;
    assert!((mse_probability_field(&truth, &estimate, &grid) - want).abs() <= 1e-12);
}
