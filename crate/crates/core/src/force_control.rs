//! Force sensing and compliant motion.
//!
//! Raw strain-gauge signals are decoded with a 6×6 calibration matrix and
//! low-pass filtered with a digital Butterworth design. Guarded descent
//! lowers the tool at constant speed until contact; compliant following
//! then offsets the nominal path by the guarded depth plus an accumulated
//! proportional force correction along the tool z axis.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_kinematics::{DlsConfig, KinematicChain, KinematicsError};
use crate::geometry::{pose_error, Pose3};

/// Sensor range: nominal 200 N in x/y, 500 N in z, 10 N·m on every torque axis.
pub const FORCE_RANGE_XY: f64 = 200.0;
pub const FORCE_RANGE_Z: f64 = 500.0;
pub const TORQUE_RANGE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceControlError {
    #[error("calibration matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("calibration file: {0}")]
    CalibrationFormat(String),
    #[error("no contact within {max_depth} m of descent")]
    NoContact { max_depth: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Arm(#[from] ArmError),
}

/// Failures reported by the arm/world side of a control step.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("tool jammed: penetration {penetration:.4} m exceeds {max:.4} m")]
    ToolJam { penetration: f64, max: f64 },
    #[error("aborted by supervisor: {0}")]
    Aborted(String),
    #[error("invalid arm command: {0}")]
    InvalidCommand(String),
}

/// Forces (N) and torques (N·m) in the tool frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl Wrench {
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { fx: v[0], fy: v[1], fz: v[2], tx: v[3], ty: v[4], tz: v[5] }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.fx, self.fy, self.fz, self.tx, self.ty, self.tz)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// True when every component lies within the sensor's nominal range.
    pub fn in_range(&self) -> bool {
        self.is_finite()
            && self.fx.abs() <= FORCE_RANGE_XY
            && self.fy.abs() <= FORCE_RANGE_XY
            && self.fz.abs() <= FORCE_RANGE_Z
            && [self.tx, self.ty, self.tz].iter().all(|t| t.abs() <= TORQUE_RANGE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedWrench {
    pub wrench: Wrench,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    matrix: Matrix6<f64>,
}

impl Default for CalibrationMatrix {
    fn default() -> Self {
        Self { matrix: Matrix6::identity() }
    }
}

impl CalibrationMatrix {
    pub const MAX_CONDITION: f64 = 1e6;

    pub fn new(matrix: Matrix6<f64>) -> Result<Self, ForceControlError> {
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(ForceControlError::CalibrationFormat("non-finite entry".into()));
        }
        let sv = matrix.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < Self::MAX_CONDITION) {
            return Err(ForceControlError::IllConditioned(cond));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    /// Parses six rows of six whitespace- or comma-separated numbers;
    /// blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ForceControlError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> =
                line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(str::parse).collect();
            let row = row.map_err(|e| ForceControlError::CalibrationFormat(format!("line {}: {e}", lineno + 1)))?;
            if row.len() != 6 {
                return Err(ForceControlError::CalibrationFormat(format!(
                    "line {}: expected 6 values, found {}",
                    lineno + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != 6 {
            return Err(ForceControlError::CalibrationFormat(format!("expected 6 rows, found {}", rows.len())));
        }
        Self::new(Matrix6::from_fn(|r, c| rows[r][c]))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..6 {
            let row: Vec<String> = (0..6).map(|c| format!("{:e}", self.matrix[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Matrix–vector product of the calibration matrix and the six signals.
    pub fn decode(&self, signals: &[f64; 6]) -> DecodedWrench {
        let wrench = Wrench::from_vector(&(self.matrix * Vector6::from_column_slice(signals)));
        DecodedWrench { valid: wrench.in_range(), wrench }
    }

    /// Inverse map used by the simulated sensor to synthesize signals.
    pub fn encode(&self, wrench: &Wrench) -> [f64; 6] {
        let inv = self.matrix.try_inverse().expect("conditioned on construction");
        let s = inv * wrench.to_vector();
        [s[0], s[1], s[2], s[3], s[4], s[5]]
    }
}

pub fn decode_wrench(signals: &[f64; 6], cal: &CalibrationMatrix) -> DecodedWrench {
    cal.decode(signals)
}

/// One second-order (or first-order, with `b[2] = a[2] = 0`) IIR section,
/// `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub sections: Vec<Section>,
}

impl FilterCoefficients {
    /// Digital Butterworth low-pass by the bilinear transform, prewarped so
    /// the -3 dB point lands exactly on `cutoff_hz`.
    pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self, ForceControlError> {
        if order == 0 || !(cutoff_hz > 0.0) || !(sample_rate_hz > 2.0 * cutoff_hz) {
            return Err(ForceControlError::InvalidParameter(format!(
                "butterworth order {order}, fc {cutoff_hz} Hz, fs {sample_rate_hz} Hz"
            )));
        }
        let k = (PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let mut sections = Vec::new();
        for i in 0..order / 2 {
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let c = 2.0 * theta.sin();
            let a0 = 1.0 + c * k + k2;
            sections.push(Section {
                b: [k2 / a0, 2.0 * k2 / a0, k2 / a0],
                a: [1.0, (2.0 * k2 - 2.0) / a0, (1.0 - c * k + k2) / a0],
            });
        }
        if order % 2 == 1 {
            let a0 = 1.0 + k;
            sections.push(Section { b: [k / a0, k / a0, 0.0], a: [1.0, (k - 1.0) / a0, 0.0] });
        }
        Ok(Self { order, cutoff_hz, sample_rate_hz, sections })
    }

    /// Poles of every section in the z-plane as (re, im).
    pub fn poles(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for s in &self.sections {
            if s.a[2] == 0.0 {
                out.push((-s.a[1], 0.0));
            } else {
                let disc = s.a[1] * s.a[1] - 4.0 * s.a[2];
                if disc >= 0.0 {
                    out.push(((-s.a[1] + disc.sqrt()) / 2.0, 0.0));
                    out.push(((-s.a[1] - disc.sqrt()) / 2.0, 0.0));
                } else {
                    out.push((-s.a[1] / 2.0, (-disc).sqrt() / 2.0));
                    out.push((-s.a[1] / 2.0, -(-disc).sqrt() / 2.0));
                }
            }
        }
        out
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(|s| s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>()).product()
    }
}

/// Cascaded direct-form-II-transposed filter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub coefficients: FilterCoefficients,
    /// Two delay registers per section.
    pub registers: Vec<[f64; 2]>,
}

impl FilterState {
    pub fn new(coefficients: FilterCoefficients) -> Self {
        let n = coefficients.sections.len();
        Self { coefficients, registers: vec![[0.0; 2]; n] }
    }

    /// Third-order 10 Hz Butterworth at the given sample rate.
    pub fn force_default(sample_rate_hz: f64) -> Self {
        Self::new(FilterCoefficients::butterworth_lowpass(3, 10.0, sample_rate_hz).expect("valid default design"))
    }

    pub fn step(&mut self, sample: f64) -> f64 {
        let mut x = sample;
        for (s, z) in self.coefficients.sections.iter().zip(self.registers.iter_mut()) {
            let y = s.b[0] * x + z[0];
            z[0] = s.b[1] * x - s.a[1] * y + z[1];
            z[1] = s.b[2] * x - s.a[2] * y;
            x = y;
        }
        x
    }

    /// Sets the registers to the steady state for a constant input `value`.
    pub fn reset_to(&mut self, value: f64) {
        let mut x = value;
        for (s, z) in self.coefficients.sections.iter().zip(self.registers.iter_mut()) {
            let gain = s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
            let y = gain * x;
            z[1] = s.b[2] * x - s.a[2] * y;
            z[0] = y - s.b[0] * x;
            x = y;
        }
    }
}

/// Functional form of [`FilterState::step`].
pub fn filter_step(mut state: FilterState, sample: f64) -> (FilterState, f64) {
    let y = state.step(sample);
    (state, y)
}

/// Decodes raw signals and filters all six wrench components.
#[derive(Debug, Clone)]
pub struct ForceSensor {
    pub calibration: CalibrationMatrix,
    filters: Vec<FilterState>,
    last_raw: Wrench,
    last_filtered: Wrench,
    last_valid: bool,
}

impl ForceSensor {
    pub fn new(calibration: CalibrationMatrix, filter: FilterState) -> Self {
        Self {
            calibration,
            filters: vec![filter; 6],
            last_raw: Wrench::default(),
            last_filtered: Wrench::default(),
            last_valid: true,
        }
    }

    pub fn process(&mut self, signals: &[f64; 6]) -> Wrench {
        let decoded = self.calibration.decode(signals);
        self.last_raw = decoded.wrench;
        self.last_valid = decoded.valid;
        let raw = decoded.wrench.to_vector();
        let filtered = Vector6::from_fn(|i, _| self.filters[i].step(raw[i]));
        self.last_filtered = Wrench::from_vector(&filtered);
        self.last_filtered
    }

    /// Primes all filters at the decoded value of `signals`.
    pub fn prime(&mut self, signals: &[f64; 6]) -> Wrench {
        let decoded = self.calibration.decode(signals);
        let raw = decoded.wrench.to_vector();
        for (f, v) in self.filters.iter_mut().zip(raw.iter()) {
            f.reset_to(*v);
        }
        self.last_raw = decoded.wrench;
        self.last_valid = decoded.valid;
        self.last_filtered = decoded.wrench;
        self.last_filtered
    }

    pub fn raw(&self) -> Wrench {
        self.last_raw
    }

    pub fn filtered(&self) -> Wrench {
        self.last_filtered
    }

    pub fn valid(&self) -> bool {
        self.last_valid
    }

    pub fn coefficients(&self) -> &FilterCoefficients {
        &self.filters[0].coefficients
    }
}

/// The arm as seen by the force controller: one call advances the world by
/// one control period and returns the raw force-sensor signals.
pub trait CompliantArm {
    fn dt(&self) -> f64;
    fn chain(&self) -> &KinematicChain;
    /// Measured joint angles.
    fn joints(&self) -> Vec<f64>;
    fn step(&mut self, q_target: &[f64]) -> Result<[f64; 6], ArmError>;

    fn flange_pose(&self) -> Pose3 {
        self.chain().fk_unchecked(&self.joints())
    }
}

/// One closed-loop servo increment toward `target`: the pose error is mapped
/// through the damped pseudo-inverse and limited to what the joints can do
/// in one period.
pub fn servo_toward(chain: &KinematicChain, q: &[f64], target: &Pose3, dls: &DlsConfig, dt: f64) -> Result<Vec<f64>, KinematicsError> {
    let twist = pose_error(&chain.fk_unchecked(q), target);
    let step = chain.cartesian_increment(q, &twist, dls)?;
    let max = chain.vel_limit * dt;
    let peak = step.dq.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if peak > max { max / peak } else { 1.0 };
    let mut next: Vec<f64> = q.iter().zip(&step.dq).map(|(a, d)| a + scale * d).collect();
    chain.clamp_to_limits(&mut next);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardedDescentConfig {
    /// m/s
    pub v_descend: f64,
    /// Contact threshold on filtered tool-z force, N.
    pub f_contact: f64,
    /// m
    pub max_guard_depth: f64,
}

impl Default for GuardedDescentConfig {
    fn default() -> Self {
        Self { v_descend: 0.02, f_contact: 10.0, max_guard_depth: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardedDescentResult {
    /// Distance lowered along the descent axis, m.
    pub delta_guard: f64,
    /// Descent direction in the arm base frame (tool z at the start).
    pub axis: Vector3<f64>,
    pub start_pose: Pose3,
    pub contact_pose: Pose3,
    pub steps: usize,
    pub filtered_fz: f64,
}

/// Lowers the tool along its z axis at constant speed until the filtered
/// tool-z force reaches the contact threshold.
pub fn guarded_descent(
    arm: &mut dyn CompliantArm,
    sensor: &mut ForceSensor,
    config: &GuardedDescentConfig,
    dls: &DlsConfig,
) -> Result<GuardedDescentResult, ForceControlError> {
    if !(config.v_descend > 0.0) {
        return Err(ForceControlError::InvalidParameter("v_descend must be positive".into()));
    }
    if !(config.f_contact > 0.0 && config.f_contact <= FORCE_RANGE_Z) {
        return Err(ForceControlError::InvalidParameter("contact force outside sensor range".into()));
    }
    let dt = arm.dt();
    let q0 = arm.joints();
    let start_pose = arm.flange_pose();
    let axis = start_pose.rotation * Vector3::z();
    let signals = arm.step(&q0)?;
    let initial = sensor.prime(&signals);
    if initial.fz >= config.f_contact {
        return Ok(GuardedDescentResult {
            delta_guard: 0.0,
            axis,
            start_pose,
            contact_pose: start_pose,
            steps: 0,
            filtered_fz: initial.fz,
        });
    }
    let mut k = 0usize;
    loop {
        k += 1;
        let commanded = config.v_descend * dt * k as f64;
        if commanded > config.max_guard_depth {
            return Err(ForceControlError::NoContact { max_depth: config.max_guard_depth });
        }
        let mut target = start_pose;
        target.translation.vector += axis * commanded;
        let q = arm.joints();
        let q_cmd = servo_toward(arm.chain(), &q, &target, dls, dt)?;
        let signals = arm.step(&q_cmd)?;
        let filtered = sensor.process(&signals);
        if filtered.fz >= config.f_contact {
            let contact_pose = arm.flange_pose();
            let lowered = (contact_pose.translation.vector - start_pose.translation.vector).dot(&axis);
            return Ok(GuardedDescentResult {
                delta_guard: lowered,
                axis,
                start_pose,
                contact_pose,
                steps: k,
                filtered_fz: filtered.fz,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplianceConfig {
    /// m/N
    pub kp: f64,
    /// Bound on the accumulated correction, m.
    pub clamp: f64,
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        Self { kp: 2e-5, clamp: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceState {
    /// Saved guarded-descent depth, m.
    pub delta_guard: f64,
    /// Direction the guarded depth is applied along (unit, arm base frame).
    pub guard_axis: Unit<Vector3<f64>>,
    /// Accumulated force correction along the tool z axis, m.
    pub delta_f_accum: f64,
    /// Desired contact force, N.
    pub f_set: f64,
    pub kp: f64,
    pub clamp: f64,
    pub saturated: bool,
}

impl ComplianceState {
    pub fn new(delta_guard: f64, guard_axis: Vector3<f64>, f_set: f64, config: &ComplianceConfig) -> Result<Self, ForceControlError> {
        if !(config.kp > 0.0) || !(config.clamp > 0.0) {
            return Err(ForceControlError::InvalidParameter("kp and clamp must be positive".into()));
        }
        if !delta_guard.is_finite() || !f_set.is_finite() || !(guard_axis.norm() > 0.0) {
            return Err(ForceControlError::InvalidParameter("non-finite compliance state".into()));
        }
        Ok(Self {
            delta_guard,
            guard_axis: Unit::new_normalize(guard_axis),
            delta_f_accum: 0.0,
            f_set,
            kp: config.kp,
            clamp: config.clamp,
            saturated: false,
        })
    }
}

/// One compliant-following cycle: P-controller on the force error, summed
/// into the accumulated correction, and the nominal point shifted by the
/// guarded depth plus that correction.
pub fn compliant_step(nominal: &Pose3, comp: &ComplianceState, filtered_fz: f64) -> (Pose3, ComplianceState) {
    let mut next = comp.clone();
    let error = comp.f_set - filtered_fz;
    let increment = comp.kp * error;
    let accum = comp.delta_f_accum + increment;
    next.delta_f_accum = accum.clamp(-comp.clamp, comp.clamp);
    next.saturated = comp.saturated || accum.abs() >= comp.clamp;
    let tool_z = nominal.rotation * Vector3::z();
    let mut target = *nominal;
    target.translation.vector += comp.guard_axis.into_inner() * comp.delta_guard + tool_z * next.delta_f_accum;
    (target, next)
}
