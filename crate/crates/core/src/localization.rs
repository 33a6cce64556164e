//! Extended Kalman filter over the planar state `[x, y, yaw, v]`.
//!
//! Wheel odometry speed and gyro yaw rate enter as the control input;
//! GNSS position and compass heading are measurements. All operations are
//! pure functions on [`EstimatorState`] values.

use nalgebra::{Matrix1x4, Matrix2, Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose2D};
use crate::sim_world::GnssFix;

/// Tolerance on negative eigenvalues when checking positive semi-definiteness.
pub const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("covariance is not symmetric positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl EstimatorState {
    pub fn new(pose: Pose2D, v: f64, covariance: Matrix4<f64>) -> Self {
        Self { mean: Vector4::new(pose.x, pose.y, wrap_angle(pose.yaw), v), covariance }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D { x: self.mean[0], y: self.mean[1], yaw: self.mean[2] }
    }

    pub fn speed(&self) -> f64 {
        self.mean[3]
    }

    pub fn position_sigma(&self) -> f64 {
        (self.covariance[(0, 0)] + self.covariance[(1, 1)]).max(0.0).sqrt()
    }
}

/// Smallest eigenvalue of the symmetric part of `p`.
pub fn min_eigenvalue(p: &Matrix4<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn is_psd(p: &Matrix4<f64>) -> bool {
    p.iter().all(|v| v.is_finite()) && (p - p.transpose()).amax() <= 1e-9 * (1.0 + p.amax()) && min_eigenvalue(p) >= -PSD_TOLERANCE
}

fn check_psd(p: &Matrix4<f64>) -> Result<(), LocalizationError> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(LocalizationError::NonFinite);
    }
    if !is_psd(p) {
        return Err(LocalizationError::NotPsd { min_eigenvalue: min_eigenvalue(p) });
    }
    Ok(())
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-step process noise diagonal.
    pub q_diag: [f64; 4],
    /// GNSS position standard deviation, m.
    pub gnss_sigma: f64,
    /// Compass standard deviation, rad.
    pub compass_sigma: f64,
    /// χ² gate on the 2-dof GNSS innovation.
    pub gnss_gate: f64,
    /// χ² gate on the 1-dof compass innovation.
    pub compass_gate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q_diag: [1e-4, 1e-4, 1e-4, 1e-2],
            gnss_sigma: 0.02,
            compass_sigma: 0.05,
            gnss_gate: 13.8,
            compass_gate: 10.83,
        }
    }
}

impl NoiseConfig {
    pub fn q(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.q_diag))
    }

    pub fn r_gnss(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.gnss_sigma.powi(2)
    }

    pub fn r_compass(&self) -> f64 {
        self.compass_sigma.powi(2)
    }
}

/// Control input: odometry speed and gyro yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

/// Motion map used by the predict step.
pub fn motion_model(mean: &Vector4<f64>, u: ControlInput, dt: f64) -> Vector4<f64> {
    let yaw = mean[2];
    Vector4::new(mean[0] + u.v * yaw.cos() * dt, mean[1] + u.v * yaw.sin() * dt, wrap_angle(yaw + u.omega * dt), u.v)
}

/// Jacobian of [`motion_model`] with respect to the state.
pub fn motion_jacobian(mean: &Vector4<f64>, u: ControlInput, dt: f64) -> Matrix4<f64> {
    let yaw = mean[2];
    #[rustfmt::skip]
    let f = Matrix4::new(
        1.0, 0.0, -u.v * yaw.sin() * dt, 0.0,
        0.0, 1.0,  u.v * yaw.cos() * dt, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
    );
    f
}

pub fn ekf_predict(s: &EstimatorState, u: ControlInput, dt: f64, noise: &NoiseConfig) -> Result<EstimatorState, LocalizationError> {
    if !(dt > 0.0) {
        return Err(LocalizationError::NonPositiveDt(dt));
    }
    if !(u.v.is_finite() && u.omega.is_finite() && dt.is_finite()) {
        return Err(LocalizationError::NonFinite);
    }
    check_psd(&s.covariance)?;
    let f = motion_jacobian(&s.mean, u, dt);
    let covariance = symmetrize(f * s.covariance * f.transpose() + noise.q());
    Ok(EstimatorState { mean: motion_model(&s.mean, u, dt), covariance })
}

/// Result of a gated measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub state: EstimatorState,
    pub accepted: bool,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis: f64,
}

impl UpdateOutcome {
    pub fn rejected(&self) -> bool {
        !self.accepted
    }
}

pub fn ekf_update_gnss(s: &EstimatorState, fix: &GnssFix, noise: &NoiseConfig) -> Result<UpdateOutcome, LocalizationError> {
    if !(fix.x.is_finite() && fix.y.is_finite()) {
        return Err(LocalizationError::NonFinite);
    }
    check_psd(&s.covariance)?;
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let r = noise.r_gnss();
    let innovation = Vector2::new(fix.x - s.mean[0], fix.y - s.mean[1]);
    let s_mat = h * s.covariance * h.transpose() + r;
    let Some(s_inv) = s_mat.try_inverse() else {
        return Ok(UpdateOutcome { state: *s, accepted: false, mahalanobis: f64::INFINITY });
    };
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if !(d2 <= noise.gnss_gate) {
        return Ok(UpdateOutcome { state: *s, accepted: false, mahalanobis: d2 });
    }
    let k: Matrix4x2<f64> = s.covariance * h.transpose() * s_inv;
    let mut mean = s.mean + k * innovation;
    mean[2] = wrap_angle(mean[2]);
    let ikh = Matrix4::identity() - k * h;
    let covariance = symmetrize(ikh * s.covariance * ikh.transpose() + k * r * k.transpose());
    Ok(UpdateOutcome { state: EstimatorState { mean, covariance }, accepted: true, mahalanobis: d2 })
}

pub fn ekf_update_compass(s: &EstimatorState, heading: f64, noise: &NoiseConfig) -> Result<UpdateOutcome, LocalizationError> {
    if !heading.is_finite() {
        return Err(LocalizationError::NonFinite);
    }
    check_psd(&s.covariance)?;
    let h = Matrix1x4::new(0.0, 0.0, 1.0, 0.0);
    let r = noise.r_compass();
    let innovation = wrap_angle(heading - s.mean[2]);
    let s_scalar = s.covariance[(2, 2)] + r;
    if !(s_scalar > 0.0) {
        return Ok(UpdateOutcome { state: *s, accepted: false, mahalanobis: f64::INFINITY });
    }
    let d2 = innovation * innovation / s_scalar;
    if !(d2 <= noise.compass_gate) {
        return Ok(UpdateOutcome { state: *s, accepted: false, mahalanobis: d2 });
    }
    let k: Vector4<f64> = s.covariance * h.transpose() / s_scalar;
    let mut mean = s.mean + k * innovation;
    mean[2] = wrap_angle(mean[2]);
    let ikh = Matrix4::identity() - k * h;
    let covariance = symmetrize(ikh * s.covariance * ikh.transpose() + k * r * k.transpose());
    Ok(UpdateOutcome { state: EstimatorState { mean, covariance }, accepted: true, mahalanobis: d2 })
}

/// Stateful wrapper that owns the current estimate and counts gating results.
#[derive(Debug, Clone)]
pub struct LocationEstimator {
    pub state: EstimatorState,
    pub noise: NoiseConfig,
    pub rejected_gnss: usize,
    pub rejected_compass: usize,
}

impl LocationEstimator {
    pub fn new(initial: Pose2D, noise: NoiseConfig) -> Self {
        let p0 = Matrix4::from_diagonal(&Vector4::new(
            noise.gnss_sigma.powi(2).max(1e-6),
            noise.gnss_sigma.powi(2).max(1e-6),
            noise.compass_sigma.powi(2).max(1e-6),
            1e-2,
        ));
        Self { state: EstimatorState::new(initial, 0.0, p0), noise, rejected_gnss: 0, rejected_compass: 0 }
    }

    pub fn predict(&mut self, u: ControlInput, dt: f64) -> Result<(), LocalizationError> {
        self.state = ekf_predict(&self.state, u, dt, &self.noise)?;
        Ok(())
    }

    pub fn update_gnss(&mut self, fix: &GnssFix) -> Result<bool, LocalizationError> {
        let out = ekf_update_gnss(&self.state, fix, &self.noise)?;
        self.state = out.state;
        if !out.accepted {
            self.rejected_gnss += 1;
        }
        Ok(out.accepted)
    }

    pub fn update_compass(&mut self, heading: f64) -> Result<bool, LocalizationError> {
        let out = ekf_update_compass(&self.state, heading, &self.noise)?;
        self.state = out.state;
        if !out.accepted {
            self.rejected_compass += 1;
        }
        Ok(out.accepted)
    }

    pub fn pose(&self) -> Pose2D {
        self.state.pose()
    }
}
