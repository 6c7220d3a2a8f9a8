//! Radial-basis-function field model, ground-truth generation and the
//! thresholded binary sensor.
//!
//! The field is a sum of Gaussian kernels
//! `phi(x) = sum_i beta_i * exp(-|c_i - x|^2 / sigma_i^2)`. A sensor at `x`
//! observes `phi(x) + v` with `v ~ N(0, sigma_v^2)` and reports only whether
//! that reading exceeds a threshold `tau`.

use nalgebra::{DVector, Point2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Axis-aligned rectangular region the vehicle may sample from (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaOfInterest {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for AreaOfInterest {
    fn default() -> Self {
        Self { x_min: 0.0, x_max: 100.0, y_min: 0.0, y_max: 100.0 }
    }
}

impl AreaOfInterest {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, ModelError> {
        let area = Self { x_min, x_max, y_min, y_max };
        area.validate()?;
        Ok(area)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(ModelError::InvalidArea(*self));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }

    pub fn clamp(&self, p: Point2<f64>) -> Point2<f64> {
        Point2::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }

    /// Cell-centered `n x n` lattice, row-major with `x` varying fastest.
    pub fn lattice(&self, n: usize) -> Vec<Point2<f64>> {
        let dx = self.width() / n as f64;
        let dy = self.height() / n as f64;
        let mut points = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push(Point2::new(
                    self.x_min + (i as f64 + 0.5) * dx,
                    self.y_min + (j as f64 + 0.5) * dy,
                ));
            }
        }
        points
    }
}

/// Kernel centers and length-scales. The coefficients live in [`FieldModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    centers: Vec<Point2<f64>>,
    length_scales: Vec<f64>,
}

impl RbfBasis {
    pub fn new(centers: Vec<Point2<f64>>, length_scales: Vec<f64>) -> Result<Self, ModelError> {
        if centers.is_empty() {
            return Err(ModelError::EmptyBasis);
        }
        if centers.len() != length_scales.len() {
            return Err(ModelError::LengthMismatch {
                what: "length_scales",
                expected: centers.len(),
                found: length_scales.len(),
            });
        }
        if let Some((i, &s)) = length_scales.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(ModelError::NonPositiveLengthScale { index: i, value: s });
        }
        Ok(Self { centers, length_scales })
    }

    /// Square grid of `per_axis^2` kernels at cell centers of `area`, all with
    /// the same length-scale. `per_axis = 4` on `[0,100]^2` gives centers in
    /// `{12.5, 37.5, 62.5, 87.5}^2`.
    pub fn grid(area: &AreaOfInterest, per_axis: usize, length_scale: f64) -> Result<Self, ModelError> {
        let centers = area.lattice(per_axis);
        let scales = vec![length_scale; centers.len()];
        Self::new(centers, scales)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point2<f64>] {
        &self.centers
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    /// `K(x)`: entry `i` is `exp(-|c_i - x|^2 / sigma_i^2)`.
    pub fn kernel_vector(&self, x: &Point2<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.centers.iter().zip(&self.length_scales).map(|(c, s)| {
                let d2 = (c - x).norm_squared();
                (-d2 / (s * s)).exp()
            }),
        )
    }
}

/// `phi(x) = <beta, K(x)>` for a fixed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    basis: RbfBasis,
    coefficients: DVector<f64>,
}

impl FieldModel {
    pub fn new(basis: RbfBasis, coefficients: DVector<f64>) -> Result<Self, ModelError> {
        if coefficients.len() != basis.len() {
            return Err(ModelError::LengthMismatch {
                what: "coefficients",
                expected: basis.len(),
                found: coefficients.len(),
            });
        }
        Ok(Self { basis, coefficients })
    }

    pub fn from_parts(
        centers: Vec<Point2<f64>>,
        length_scales: Vec<f64>,
        coefficients: Vec<f64>,
    ) -> Result<Self, ModelError> {
        Self::new(RbfBasis::new(centers, length_scales)?, DVector::from_vec(coefficients))
    }

    pub fn p(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &RbfBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn with_coefficients(&self, coefficients: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(self.basis.clone(), coefficients)
    }

    pub fn kernel_vector(&self, x: &Point2<f64>) -> DVector<f64> {
        self.basis.kernel_vector(x)
    }

    pub fn value(&self, x: &Point2<f64>) -> f64 {
        self.coefficients.dot(&self.kernel_vector(x))
    }
}

/// Free-function form of [`FieldModel::kernel_vector`].
pub fn kernel_vector(model: &FieldModel, x: &Point2<f64>) -> DVector<f64> {
    model.kernel_vector(x)
}

/// Free-function form of [`FieldModel::value`].
pub fn field_value(model: &FieldModel, x: &Point2<f64>) -> f64 {
    model.value(x)
}

/// The simulated environment: a field plus sensor noise and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    model: FieldModel,
    noise_variance: f64,
    threshold: f64,
}

impl GroundTruth {
    pub fn new(model: FieldModel, noise_variance: f64, threshold: f64) -> Result<Self, ModelError> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(ModelError::NonPositive { what: "noise_variance", value: noise_variance });
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(ModelError::NonPositive { what: "threshold", value: threshold });
        }
        Ok(Self { model, noise_variance, threshold })
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_variance.sqrt()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `P(z = 1)` at `x` under this ground truth.
    pub fn detection_probability(&self, x: &Point2<f64>) -> f64 {
        detection_probability(&self.model, self.noise_std(), self.threshold, x)
    }
}

/// One binary reading taken at `position` as the `index`-th measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub position: Point2<f64>,
    detected: bool,
    pub index: usize,
}

impl Measurement {
    pub fn new(position: Point2<f64>, detected: bool, index: usize) -> Self {
        Self { position, detected, index }
    }

    pub fn detected(&self) -> bool {
        self.detected
    }

    /// `z` in `{0, 1}`.
    pub fn z(&self) -> u8 {
        u8::from(self.detected)
    }

    /// `z~ = 2z - 1` in `{-1, +1}`.
    pub fn z_signed(&self) -> f64 {
        if self.detected {
            1.0
        } else {
            -1.0
        }
    }
}

/// Parameter ranges for random ground-truth fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthPrior {
    pub kernels: usize,
    pub coefficient_range: (f64, f64),
    /// Fraction of the area's extent excluded on each side when drawing centers.
    pub center_margin: f64,
    pub length_scale_range: (f64, f64),
    pub noise_variance: f64,
    pub threshold: f64,
}

impl Default for TruthPrior {
    fn default() -> Self {
        Self {
            kernels: 4,
            coefficient_range: (0.7, 1.4),
            center_margin: 0.05,
            length_scale_range: (25.0, 45.0),
            noise_variance: 0.1,
            threshold: 1.0,
        }
    }
}

impl TruthPrior {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok_range = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if self.kernels == 0 {
            return Err(ModelError::EmptyBasis);
        }
        if !ok_range(self.coefficient_range) {
            return Err(ModelError::InvalidRange("truth.coefficient_range"));
        }
        if !ok_range(self.length_scale_range) || self.length_scale_range.0 <= 0.0 {
            return Err(ModelError::InvalidRange("truth.length_scale_range"));
        }
        if !(0.0..0.5).contains(&self.center_margin) {
            return Err(ModelError::InvalidRange("truth.center_margin"));
        }
        if self.noise_variance.is_nan() || self.noise_variance <= 0.0 {
            return Err(ModelError::NonPositive { what: "noise_variance", value: self.noise_variance });
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(ModelError::NonPositive { what: "threshold", value: self.threshold });
        }
        Ok(())
    }

    /// Draws a field. Order: all coefficients, then each center (x then y),
    /// then all length-scales.
    pub fn sample<R: Rng + ?Sized>(&self, area: &AreaOfInterest, rng: &mut R) -> Result<GroundTruth, ModelError> {
        self.validate()?;
        area.validate()?;
        let n = self.kernels;
        let uniform = |(lo, hi): (f64, f64)| Uniform::new(lo, hi).expect("validated range");
        let beta = uniform(self.coefficient_range);
        let cx = uniform((
            area.x_min + self.center_margin * area.width(),
            area.x_max - self.center_margin * area.width(),
        ));
        let cy = uniform((
            area.y_min + self.center_margin * area.height(),
            area.y_max - self.center_margin * area.height(),
        ));
        let sigma = uniform(self.length_scale_range);

        let coefficients: Vec<f64> = (0..n).map(|_| beta.sample(rng)).collect();
        let centers: Vec<Point2<f64>> = (0..n)
            .map(|_| {
                let x = cx.sample(rng);
                let y = cy.sample(rng);
                Point2::new(x, y)
            })
            .collect();
        let length_scales: Vec<f64> = (0..n).map(|_| sigma.sample(rng)).collect();

        let model = FieldModel::from_parts(centers, length_scales, coefficients)?;
        GroundTruth::new(model, self.noise_variance, self.threshold)
    }
}

/// Random ground truth with the default prior: four kernels,
/// `beta ~ U(0.7, 1.4)`, centers `~ U(5, 95)` on the default area,
/// `sigma ~ U(25, 45)`, `sigma_v^2 = 0.1`, `tau = 1`.
pub fn sample_ground_truth<R: Rng + ?Sized>(area: &AreaOfInterest, rng: &mut R) -> Result<GroundTruth, ModelError> {
    TruthPrior::default().sample(area, rng)
}

/// Takes one thresholded reading of the ground truth at `x`.
pub fn simulate_measurement<R: Rng + ?Sized>(gt: &GroundTruth, x: Point2<f64>, index: usize, rng: &mut R) -> Measurement {
    let noise = Normal::new(0.0, gt.noise_std()).expect("noise variance is positive");
    let reading = gt.model.value(&x) + noise.sample(rng);
    Measurement::new(x, reading > gt.threshold, index)
}

/// Standard normal cdf, `Phi(x) = erfc(-x / sqrt 2) / 2`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(z = 1 | model; x) = 1 - Phi((tau - phi(x)) / sigma_v)`.
pub fn detection_probability(model: &FieldModel, noise_std: f64, threshold: f64, x: &Point2<f64>) -> f64 {
    probability_from_value(model.value(x), noise_std, threshold)
}

/// Detection probability given an already evaluated field value.
pub fn probability_from_value(phi: f64, noise_std: f64, threshold: f64) -> f64 {
    // 1 - Phi(a) = Phi(-a), which avoids cancellation in the upper tail.
    standard_normal_cdf((phi - threshold) / noise_std)
}
