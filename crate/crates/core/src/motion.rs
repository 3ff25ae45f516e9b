//! Constant-velocity Kalman filtering over box states.
//!
//! State is 8-dimensional: `(cx, cy, a, h)` plus their velocities, where `a`
//! is the width/height aspect ratio. Process and measurement noise scale with
//! the box height so uncertainty tracks apparent object size.

use crate::error::Error;
use crate::geometry::BoundingBox;
use nalgebra::{Cholesky, SMatrix, SVector};

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;
type Vec4 = SVector<f64, 4>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat4x8 = SMatrix<f64, 4, 8>;

/// 95% quantile of the chi-square distribution with 4 degrees of freedom;
/// squared Mahalanobis distances above this reject an association candidate.
pub const CHI2_GATE_4D: f64 = 9.4877;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// Gaussian box-motion estimate. Value semantics: the filter functions below
/// take a state and return a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    mean: Vec8,
    covariance: Mat8,
}

impl KalmanState {
    /// `(cx, cy, a, h, vx, vy, va, vh)`.
    pub fn mean(&self) -> [f64; 8] {
        self.mean.into()
    }

    pub fn covariance(&self) -> [[f64; 8]; 8] {
        let mut out = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                out[i][j] = self.covariance[(i, j)];
            }
        }
        out
    }

    /// The box described by the current mean.
    pub fn bbox(&self) -> BoundingBox {
        let m = &self.mean;
        let w = m[2] * m[3];
        BoundingBox {
            x: m[0] - w / 2.0,
            y: m[1] - m[3] / 2.0,
            w,
            h: m[3],
        }
    }
}

/// Converts a box to measurement space `(cx, cy, a, h)`.
pub fn measurement_from_box(bbox: &BoundingBox) -> [f64; 4] {
    [
        bbox.x + bbox.w / 2.0,
        bbox.y + bbox.h / 2.0,
        bbox.w / bbox.h,
        bbox.h,
    ]
}

fn check_box(bbox: &BoundingBox) -> Result<(), Error> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) || !bbox.w.is_finite() || !bbox.h.is_finite() {
        return Err(Error::DegenerateBox(format!(
            "box {}x{} cannot seed or update a motion state",
            bbox.w, bbox.h
        )));
    }
    Ok(())
}

/// Observation model: positions observed directly, velocities hidden.
fn observation() -> Mat4x8 {
    let mut h = Mat4x8::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// State transition for one frame step: position += velocity.
fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

/// New state centered on a detection with zero velocity. The diagonal
/// covariance uses position stds `2 * (1/20) * h` and velocity stds
/// `10 * (1/160) * h`.
pub fn kalman_init(bbox: &BoundingBox) -> Result<KalmanState, Error> {
    check_box(bbox)?;
    let z = measurement_from_box(bbox);
    let mean = Vec8::from_column_slice(&[z[0], z[1], z[2], z[3], 0.0, 0.0, 0.0, 0.0]);
    let pos_std = 2.0 * STD_WEIGHT_POSITION * z[3];
    let vel_std = 10.0 * STD_WEIGHT_VELOCITY * z[3];
    let mut covariance = Mat8::zeros();
    for i in 0..4 {
        covariance[(i, i)] = pos_std * pos_std;
        covariance[(i + 4, i + 4)] = vel_std * vel_std;
    }
    Ok(KalmanState { mean, covariance })
}

fn process_noise(h: f64) -> Mat8 {
    let pos = STD_WEIGHT_POSITION * h;
    let vel = STD_WEIGHT_VELOCITY * h;
    let mut q = Mat8::zeros();
    for i in 0..4 {
        q[(i, i)] = pos * pos;
        q[(i + 4, i + 4)] = vel * vel;
    }
    q
}

fn measurement_noise(h: f64) -> Mat4 {
    let pos = STD_WEIGHT_POSITION * h;
    Mat4::identity() * (pos * pos)
}

/// One constant-velocity step (dt = 1 frame): `x' = F x`, `C' = F C F^T + Q`,
/// with `Q` scaled by the current height.
pub fn kalman_predict(state: &KalmanState) -> KalmanState {
    let f = transition();
    let mean = f * state.mean;
    let covariance = f * state.covariance * f.transpose() + process_noise(state.mean[3]);
    KalmanState { mean, covariance }
}

/// Measurement update against a detected box. Measurement noise scales with
/// the measured height. The posterior covariance uses the short form
/// `(I - K H) C`, symmetrized to keep numerical round-off from accumulating.
pub fn kalman_update(state: &KalmanState, bbox: &BoundingBox) -> Result<KalmanState, Error> {
    check_box(bbox)?;
    let z = measurement_from_box(bbox);
    let h = observation();
    let s = h * state.covariance * h.transpose() + measurement_noise(z[3]);
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    // K = C H^T S^-1, via S K^T = H C.
    let k = chol.solve(&(h * state.covariance)).transpose();
    let innovation = Vec4::from_column_slice(&z) - h * state.mean;
    let mean = state.mean + k * innovation;
    let covariance = (Mat8::identity() - k * h) * state.covariance;
    let covariance = (covariance + covariance.transpose()) * 0.5;
    Ok(KalmanState { mean, covariance })
}

/// Squared Mahalanobis distances from the state's predicted measurement to
/// each candidate box, sharing one triangular factorization of
/// `S = H C H^T + R` (R scaled by the predicted height).
pub fn mahalanobis_gate(
    state: &KalmanState,
    candidates: &[BoundingBox],
) -> Result<Vec<f64>, Error> {
    let h = observation();
    let s = h * state.covariance * h.transpose() + measurement_noise(state.mean[3]);
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    let projected = h * state.mean;
    Ok(candidates
        .iter()
        .map(|bbox| {
            let z = measurement_from_box(bbox);
            let y = Vec4::from_column_slice(&z) - projected;
            y.dot(&chol.solve(&y))
        })
        .collect())
}
