//! Serial-arm kinematics: forward, differential, and damped-least-squares
//! inverse kinematics, plus synchronized point-to-point joint planning.
//!
//! The chain is a list of revolute joints, each preceded by a fixed
//! origin transform, followed by a fixed tool transform. The frame at the end
//! of the tool transform is the tool center point (TCP); throughout the crate
//! "flange pose" means this frame, i.e. the tool tip that touches the ground.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Isometry3, Point3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pose_error, Pose3, TransformSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {index} ({name}) at {value:.6} rad violates limit ±{limit:.6} rad")]
    JointLimit { index: usize, name: String, value: f64, limit: f64 },
    #[error("expected {expected} joint values, got {got}")]
    DofMismatch { expected: usize, got: usize },
    #[error("unreachable target: best residual {position_error:.3e} m / {orientation_error:.3e} rad after {iterations} iterations")]
    Unreachable { position_error: f64, orientation_error: f64, iterations: usize, best_q: Vec<f64> },
    #[error("jacobian singular: smallest singular value {sigma_min:.3e}")]
    Singular { sigma_min: f64 },
    #[error("invalid chain description: {0}")]
    InvalidChain(String),
    #[error("non-finite input")]
    NonFinite,
}

/// One revolute joint as written in a chain description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    /// Fixed transform from the previous joint frame to this joint's frame.
    pub origin: TransformSpec,
    /// Rotation axis in this joint's frame.
    pub axis: [f64; 3],
    /// Symmetric position limit in degrees.
    pub limit_deg: f64,
}

/// Chain description file schema (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub joints: Vec<JointSpec>,
    /// Fixed transform from the last joint frame to the TCP.
    pub tool: TransformSpec,
    pub vel_limit_deg_s: f64,
    pub acc_limit_deg_s2: f64,
}

impl ChainSpec {
    /// Three paired-perpendicular-axis modules with 0.3 / 0.3 / 0.2 m links.
    ///
    /// Plausible lightweight-arm geometry; not vendor data.
    pub fn default_six_dof() -> Self {
        let joint = |name: &str, z: f64, axis: [f64; 3], limit_deg: f64| JointSpec {
            name: name.to_string(),
            origin: TransformSpec::translation(0.0, 0.0, z),
            axis,
            limit_deg,
        };
        Self {
            joints: vec![
                joint("shoulder_yaw", 0.0, [0.0, 0.0, 1.0], 170.0),
                joint("shoulder_pitch", 0.0, [0.0, 1.0, 0.0], 170.0),
                joint("elbow_pitch", 0.3, [0.0, 1.0, 0.0], 156.5),
                joint("forearm_roll", 0.0, [0.0, 0.0, 1.0], 170.0),
                joint("wrist_pitch", 0.3, [0.0, 1.0, 0.0], 170.0),
                joint("wrist_roll", 0.0, [0.0, 0.0, 1.0], 170.0),
            ],
            tool: TransformSpec::translation(0.0, 0.0, 0.2),
            vel_limit_deg_s: 72.0,
            acc_limit_deg_s2: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    /// Symmetric limit, rad.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<Joint>,
    pub tool: Isometry3<f64>,
    /// rad/s
    pub vel_limit: f64,
    /// rad/s²
    pub acc_limit: f64,
}

impl Default for KinematicChain {
    fn default() -> Self {
        Self::from_spec(&ChainSpec::default_six_dof()).expect("default chain is valid")
    }
}

impl KinematicChain {
    pub fn from_spec(spec: &ChainSpec) -> Result<Self, KinematicsError> {
        if spec.joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        if !(spec.vel_limit_deg_s > 0.0 && spec.acc_limit_deg_s2 > 0.0) {
            return Err(KinematicsError::InvalidChain("velocity and acceleration limits must be positive".into()));
        }
        let mut joints = Vec::with_capacity(spec.joints.len());
        for j in &spec.joints {
            let axis = Vector3::from(j.axis);
            if !(axis.norm() > 1e-9) || !axis.iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidChain(format!("joint {} has a degenerate axis", j.name)));
            }
            if !(j.limit_deg > 0.0) {
                return Err(KinematicsError::InvalidChain(format!("joint {} has a non-positive limit", j.name)));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin: j.origin.to_isometry(),
                axis: Unit::new_normalize(axis),
                limit: j.limit_deg.to_radians(),
            });
        }
        Ok(Self {
            joints,
            tool: spec.tool.to_isometry(),
            vel_limit: spec.vel_limit_deg_s.to_radians(),
            acc_limit: spec.acc_limit_deg_s2.to_radians(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let spec: ChainSpec =
            serde_json::from_str(text).map_err(|e| KinematicsError::InvalidChain(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limit).collect()
    }

    fn check_dof(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DofMismatch { expected: self.dof(), got: q.len() });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    pub fn check_limits(&self, q: &[f64]) -> Result<(), KinematicsError> {
        self.check_dof(q)?;
        for (index, (joint, &value)) in self.joints.iter().zip(q).enumerate() {
            if value.abs() > joint.limit + 1e-12 {
                return Err(KinematicsError::JointLimit {
                    index,
                    name: joint.name.clone(),
                    value,
                    limit: joint.limit,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (joint, value) in self.joints.iter().zip(q.iter_mut()) {
            *value = value.clamp(-joint.limit, joint.limit);
        }
    }

    fn joint_transform(joint: &Joint, angle: f64) -> Isometry3<f64> {
        joint.origin * Isometry3::from_parts(Default::default(), UnitQuaternion::from_axis_angle(&joint.axis, angle))
    }

    /// Product of joint transforms `start..end` (no tool transform).
    pub fn segment_transform(&self, q: &[f64], start: usize, end: usize) -> Isometry3<f64> {
        self.joints[start..end]
            .iter()
            .zip(&q[start..end])
            .fold(Isometry3::identity(), |acc, (joint, &angle)| acc * Self::joint_transform(joint, angle))
    }

    /// TCP pose in the chain base frame.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose3, KinematicsError> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    /// FK without limit checks; still requires the correct dof.
    pub fn fk_unchecked(&self, q: &[f64]) -> Pose3 {
        self.segment_transform(q, 0, self.dof()) * self.tool
    }

    /// Geometric Jacobian in the base frame: rows 0..3 linear velocity of
    /// the TCP, rows 3..6 angular velocity.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_limits(q)?;
        Ok(self.jacobian_unchecked(q))
    }

    pub fn jacobian_unchecked(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let mut frames = Vec::with_capacity(n);
        let mut t = Isometry3::identity();
        for (joint, &angle) in self.joints.iter().zip(q) {
            let at_joint = t * joint.origin;
            frames.push((at_joint.translation.vector, at_joint.rotation * joint.axis.into_inner()));
            t = at_joint * Isometry3::from_parts(Default::default(), UnitQuaternion::from_axis_angle(&joint.axis, angle));
        }
        let tip = (t * self.tool).translation.vector;
        let mut jac = DMatrix::zeros(6, n);
        for (i, (origin, axis)) in frames.iter().enumerate() {
            let linear = axis.cross(&(tip - origin));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(axis);
        }
        jac
    }

    /// Solves for joint angles that reach `target` starting from `q0`.
    pub fn inverse_kinematics(&self, target: &Pose3, q0: &[f64], config: &IkConfig) -> Result<IkSolution, KinematicsError> {
        self.check_limits(q0)?;
        let mut q = q0.to_vec();
        let mut best: Option<(f64, IkSolution)> = None;
        for iteration in 0..=config.max_iterations {
            let current = self.fk_unchecked(&q);
            let err = pose_error(&current, target);
            let pos_err = err.fixed_rows::<3>(0).norm();
            let rot_err = err.fixed_rows::<3>(3).norm();
            let score = pos_err + rot_err;
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((
                    score,
                    IkSolution { q: q.clone(), iterations: iteration, position_error: pos_err, orientation_error: rot_err },
                ));
            }
            if pos_err <= config.position_tolerance && rot_err <= config.orientation_tolerance {
                return Ok(best.expect("set above").1);
            }
            if iteration == config.max_iterations {
                break;
            }
            let jac = self.jacobian_unchecked(&q);
            let sigma_min = smallest_singular_value(&jac);
            // Damping fades with the residual so the final iterations converge
            // quadratically even close to a singular configuration.
            let fade = ((pos_err + rot_err) / config.damping_fade).min(1.0);
            let lambda = adaptive_damping(sigma_min, config.lambda0, config.singular_threshold, config.lambda_max) * fade;
            let Some(dq) = damped_solve(&jac, &DVector::from_column_slice(err.as_slice()), lambda) else {
                break;
            };
            let step_norm = dq.amax();
            let scale = if step_norm > config.max_step { config.max_step / step_norm } else { 1.0 };
            for (qi, dqi) in q.iter_mut().zip(dq.iter()) {
                *qi += scale * dqi;
            }
            self.clamp_to_limits(&mut q);
        }
        let (_, sol) = best.expect("at least one iteration evaluated");
        if sol.position_error <= config.accept_position && sol.orientation_error <= config.accept_orientation {
            return Ok(sol);
        }
        Err(KinematicsError::Unreachable {
            position_error: sol.position_error,
            orientation_error: sol.orientation_error,
            iterations: config.max_iterations,
            best_q: sol.q,
        })
    }

    /// Joint increment realizing a small TCP twist `[v; ω]` (m, rad) via the
    /// damped pseudo-inverse of the Jacobian.
    pub fn cartesian_increment(&self, q: &[f64], twist: &Vector6<f64>, config: &DlsConfig) -> Result<CartesianStep, KinematicsError> {
        self.check_dof(q)?;
        if !twist.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        let jac = self.jacobian_unchecked(q);
        let sigma_min = smallest_singular_value(&jac);
        if sigma_min < config.hard_floor {
            return Err(KinematicsError::Singular { sigma_min });
        }
        let damping = adaptive_damping(sigma_min, config.lambda_min, config.singular_threshold, config.lambda_max);
        let dq = damped_solve(&jac, &DVector::from_column_slice(twist.as_slice()), damping)
            .ok_or(KinematicsError::Singular { sigma_min })?;
        Ok(CartesianStep { dq: dq.iter().copied().collect(), damping, sigma_min })
    }

    /// Synchronized trapezoidal point-to-point motion sampled at `dt`.
    pub fn plan_ptp(&self, q_from: &[f64], q_to: &[f64], dt: f64) -> Result<JointTrajectory, KinematicsError> {
        self.check_limits(q_from)?;
        self.check_limits(q_to)?;
        if !(dt > 0.0) {
            return Err(KinematicsError::NonFinite);
        }
        let deltas: Vec<f64> = q_from.iter().zip(q_to).map(|(a, b)| b - a).collect();
        let lead = deltas.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        if lead == 0.0 {
            return Ok(JointTrajectory {
                dt,
                duration: 0.0,
                positions: vec![q_from.to_vec()],
                velocities: vec![vec![0.0; q_from.len()]],
                accelerations: vec![vec![0.0; q_from.len()]],
            });
        }
        let profile = TrapezoidProfile::new(lead, self.vel_limit, self.acc_limit);
        let steps = (profile.duration / dt - 1e-9).ceil().max(1.0) as usize;
        let mut traj = JointTrajectory {
            dt,
            duration: profile.duration,
            positions: Vec::with_capacity(steps + 1),
            velocities: Vec::with_capacity(steps + 1),
            accelerations: Vec::with_capacity(steps + 1),
        };
        for k in 0..=steps {
            let t = if k == steps { profile.duration } else { k as f64 * dt };
            let (s, v, a) = profile.sample(t);
            let ratio = |d: f64| d / lead;
            traj.positions.push(q_from.iter().zip(&deltas).map(|(q, d)| q + ratio(*d) * s).collect());
            traj.velocities.push(deltas.iter().map(|d| ratio(*d) * v).collect());
            traj.accelerations.push(deltas.iter().map(|d| ratio(*d) * a).collect());
        }
        if let Some(last) = traj.positions.last_mut() {
            last.copy_from_slice(q_to);
        }
        Ok(traj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IkConfig {
    pub max_iterations: usize,
    /// Early-exit tolerance, m.
    pub position_tolerance: f64,
    /// Early-exit tolerance, rad.
    pub orientation_tolerance: f64,
    /// Residual still accepted after the iteration budget is spent.
    pub accept_position: f64,
    pub accept_orientation: f64,
    pub lambda0: f64,
    pub lambda_max: f64,
    pub singular_threshold: f64,
    /// Largest per-iteration joint change, rad.
    pub max_step: f64,
    /// Residual (m + rad) below which damping scales down linearly.
    pub damping_fade: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            position_tolerance: 1e-10,
            orientation_tolerance: 1e-10,
            accept_position: 1e-4,
            accept_orientation: 1e-3,
            lambda0: 0.01,
            lambda_max: 0.1,
            singular_threshold: 0.04,
            max_step: 0.4,
            damping_fade: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlsConfig {
    /// Damping away from singularities.
    pub lambda_min: f64,
    /// Damping reached as σ_min → 0.
    pub lambda_max: f64,
    /// σ_min below which damping ramps up.
    pub singular_threshold: f64,
    /// σ_min below which the increment is refused.
    pub hard_floor: f64,
}

impl Default for DlsConfig {
    fn default() -> Self {
        Self { lambda_min: 0.0, lambda_max: 0.05, singular_threshold: 0.04, hard_floor: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianStep {
    pub dq: Vec<f64>,
    pub damping: f64,
    pub sigma_min: f64,
}

/// Joint samples at a fixed step. Row `k` is the configuration at `k · dt`
/// (the final row is the goal, reached at `duration`).
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub dt: f64,
    pub duration: f64,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub accelerations: Vec<Vec<f64>>,
}

impl JointTrajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Scalar rest-to-rest trapezoid over `distance` (≥ 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    pub distance: f64,
    pub peak_velocity: f64,
    pub acceleration: f64,
    pub t_acc: f64,
    pub t_cruise: f64,
    pub duration: f64,
}

impl TrapezoidProfile {
    pub fn new(distance: f64, v_max: f64, a_max: f64) -> Self {
        let d = distance.abs();
        if d * a_max >= v_max * v_max {
            let t_acc = v_max / a_max;
            let t_cruise = (d - v_max * t_acc) / v_max;
            Self { distance: d, peak_velocity: v_max, acceleration: a_max, t_acc, t_cruise, duration: 2.0 * t_acc + t_cruise }
        } else {
            let t_acc = (d / a_max).sqrt();
            Self { distance: d, peak_velocity: a_max * t_acc, acceleration: a_max, t_acc, t_cruise: 0.0, duration: 2.0 * t_acc }
        }
    }

    /// (position, velocity, acceleration) at time `t`.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let a = self.acceleration;
        let v = self.peak_velocity;
        let t = t.clamp(0.0, self.duration);
        let t_dec = self.t_acc + self.t_cruise;
        if t < self.t_acc {
            (0.5 * a * t * t, a * t, a)
        } else if t < t_dec {
            (0.5 * a * self.t_acc * self.t_acc + v * (t - self.t_acc), v, 0.0)
        } else if t < self.duration {
            let r = self.duration - t;
            (self.distance - 0.5 * a * r * r, a * r, -a)
        } else {
            (self.distance, 0.0, 0.0)
        }
    }
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn smallest_singular_value(jac: &DMatrix<f64>) -> f64 {
    jac.clone().svd(false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn adaptive_damping(sigma_min: f64, lambda_base: f64, threshold: f64, lambda_max: f64) -> f64 {
    if sigma_min >= threshold {
        lambda_base
    } else {
        let r = sigma_min / threshold;
        (lambda_base * lambda_base + (1.0 - r * r) * lambda_max * lambda_max).sqrt()
    }
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ e`, or the plain pseudo-inverse when λ = 0.
fn damped_solve(jac: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    if lambda == 0.0 {
        let svd = jac.clone().svd(true, true);
        return svd.solve(rhs, 1e-12).ok();
    }
    let m = jac.nrows();
    let jjt = jac * jac.transpose() + DMatrix::identity(m, m) * (lambda * lambda);
    let y = jjt.cholesky()?.solve(rhs);
    Some(jac.transpose() * y)
}

/// Convenience for tests and planners: angle (rad) → degrees.
pub fn rad_to_deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}

/// Joint-frame origins in the base frame, used for visualization and tests.
pub fn joint_origins(chain: &KinematicChain, q: &[f64]) -> Vec<Point3<f64>> {
    let mut t = Isometry3::identity();
    let mut out = Vec::with_capacity(chain.dof());
    for (joint, &angle) in chain.joints.iter().zip(q) {
        t *= KinematicChain::joint_transform(joint, angle);
        out.push(Point3::from(t.translation.vector));
    }
    out
}
