//! The weeding motion: approach above the root, guarded descent to the
//! ground, a force-regulated lever rotation about the tool tip, and retreat.
//!
//! Tool paths are expressed in the arm base frame. The nominal keyframe
//! path is anchored at the approach point; guarded descent supplies the
//! depth that carries it down to the ground.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_kinematics::{DlsConfig, IkConfig, KinematicChain, KinematicsError};
use crate::force_control::{
    compliant_step, guarded_descent, servo_toward, ArmError, ComplianceConfig, ComplianceState, CompliantArm, ForceControlError,
    ForceSensor, GuardedDescentConfig,
};
use crate::geometry::{nadir_orientation, Pose3};

/// Upper bound on any profile force, N.
pub const MAX_PROFILE_FORCE: f64 = 150.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeedingError {
    #[error("invalid weeding profile: {0}")]
    InvalidProfile(String),
    #[error("platform must be stationary during weeding")]
    PlatformMoving,
    #[error("weeding aborted: {0}")]
    Aborted(String),
    #[error("arm rejected command: {0}")]
    Arm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeedingStatus {
    Removed,
    ToolJam,
    NoContact,
    IkFailure,
    ForceSaturation,
}

impl WeedingStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeedingStatus::Removed => "removed",
            WeedingStatus::ToolJam => "tool_jam",
            WeedingStatus::NoContact => "no_contact",
            WeedingStatus::IkFailure => "ik_failure",
            WeedingStatus::ForceSaturation => "force_saturation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub name: String,
    /// TCP offset from the approach point: x radial (away from the arm
    /// base), y lateral, z up. m.
    pub offset: [f64; 3],
    /// Lever rotation about the tool tip, rad (see [`lever_orientation`]).
    pub angle: f64,
    /// Contact force setpoint reached at the end of the keyframe, N.
    pub force: f64,
    /// s
    pub duration: f64,
    /// Whether sustained force here can pull the weed (lever phase).
    #[serde(default)]
    pub extract: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeedingProfile {
    /// m
    pub approach_height: f64,
    pub keyframes: Vec<Keyframe>,
    /// Time the force must stay at the extraction level, s.
    pub hold_time: f64,
    /// Radius around the tool tip within which a root is gripped, m.
    pub grip_radius: f64,
    /// Force tolerance below the extraction force still counted as pulling, N.
    pub extraction_tolerance: f64,
    /// Setpoint increase per escalation stage, N.
    pub escalation_step: f64,
    /// s
    pub escalation_hold: f64,
    /// Escalation ceiling, N.
    pub max_force: f64,
    /// s
    pub retreat_duration: f64,
    /// Bound on nominal TCP speed, m/s.
    pub v_cart_max: f64,
    pub descent: GuardedDescentConfig,
    pub compliance: ComplianceConfig,
}

impl Default for WeedingProfile {
    fn default() -> Self {
        let lever = 40f64.to_radians();
        Self {
            approach_height: 0.10,
            keyframes: vec![
                Keyframe { name: "press".into(), offset: [0.0; 3], angle: 0.0, force: 50.0, duration: 1.0, extract: false },
                Keyframe { name: "lever".into(), offset: [0.0; 3], angle: lever, force: 50.0, duration: 2.0, extract: true },
                Keyframe { name: "hold".into(), offset: [0.0; 3], angle: lever, force: 50.0, duration: 1.0, extract: true },
            ],
            hold_time: 0.5,
            grip_radius: 0.03,
            extraction_tolerance: 1.0,
            escalation_step: 25.0,
            escalation_hold: 1.0,
            max_force: MAX_PROFILE_FORCE,
            retreat_duration: 1.0,
            v_cart_max: 0.1,
            descent: GuardedDescentConfig::default(),
            compliance: ComplianceConfig::default(),
        }
    }
}

impl WeedingProfile {
    pub fn validate(&self) -> Result<(), WeedingError> {
        let bad = |m: &str| Err(WeedingError::InvalidProfile(m.into()));
        if !(self.approach_height > 0.0) {
            return bad("approach_height must be positive");
        }
        if self.keyframes.is_empty() {
            return bad("at least one keyframe is required");
        }
        for k in &self.keyframes {
            if !(k.duration > 0.0) {
                return bad(&format!("keyframe '{}' duration must be positive", k.name));
            }
            if !(0.0..=MAX_PROFILE_FORCE).contains(&k.force) {
                return bad(&format!("keyframe '{}' force outside [0, 150] N", k.name));
            }
            if !(k.angle.is_finite() && k.offset.iter().all(|v| v.is_finite())) {
                return bad(&format!("keyframe '{}' is not finite", k.name));
            }
        }
        let angles: Vec<f64> = self.keyframes.iter().map(|k| k.angle).collect();
        let rising = angles.windows(2).all(|w| w[1] >= w[0]);
        let falling = angles.windows(2).all(|w| w[1] <= w[0]);
        if !(rising || falling) {
            return bad("lever rotation must be monotone");
        }
        if !(self.max_force <= MAX_PROFILE_FORCE && self.max_force >= 0.0) {
            return bad("max_force outside [0, 150] N");
        }
        if !(self.hold_time > 0.0 && self.grip_radius > 0.0 && self.escalation_hold > 0.0 && self.retreat_duration > 0.0 && self.v_cart_max > 0.0) {
            return bad("hold_time, grip_radius, escalation_hold, retreat_duration and v_cart_max must be positive");
        }
        if !(self.escalation_step >= 0.0 && self.extraction_tolerance >= 0.0) {
            return bad("escalation_step and extraction_tolerance must be non-negative");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WeedingError> {
        let p: Self = serde_json::from_str(text).map_err(|e| WeedingError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn total_duration(&self) -> f64 {
        self.keyframes.iter().map(|k| k.duration).sum()
    }

    pub fn peak_setpoint(&self) -> f64 {
        self.keyframes.iter().map(|k| k.force).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub time: f64,
    pub pose: Pose3,
    pub angle: f64,
    pub force: f64,
    pub keyframe: usize,
    pub extract: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianPath {
    pub dt: f64,
    pub approach: Pose3,
    /// Joint solution at the approach pose.
    pub q_approach: Vec<f64>,
    /// Tool x heading in the arm base frame, rad.
    pub heading: f64,
    pub samples: Vec<PathSample>,
}

/// Tool orientation for `angle` of lever rotation at `heading`. Positive
/// angles pivot about the tip so the tool body leans back over the arm base.
pub fn lever_orientation(heading: f64, angle: f64) -> UnitQuaternion<f64> {
    nadir_orientation(heading) * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -angle)
}

/// Tool x heading for working at `root`: pointing back toward the arm base,
/// which is how the wrist naturally hangs when reaching forward and down.
pub fn tool_heading_for(root: &Point3<f64>) -> f64 {
    crate::geometry::wrap_angle(root.y.atan2(root.x) + std::f64::consts::PI)
}

/// Builds the time-sampled nominal tool path for a root given in the arm base frame.
pub fn generate_tool_path(
    chain: &KinematicChain,
    root: &Point3<f64>,
    profile: &WeedingProfile,
    q_seed: &[f64],
    dt: f64,
) -> Result<CartesianPath, KinematicsError> {
    if !(dt > 0.0) || !root.coords.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    let azimuth = root.y.atan2(root.x);
    let heading = tool_heading_for(root);
    let radial = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
    let lateral = Vector3::z().cross(&radial);
    let anchor = root + Vector3::z() * profile.approach_height;
    let frame_offset = |o: &[f64; 3]| radial * o[0] + lateral * o[1] + Vector3::z() * o[2];
    let approach = Pose3::from_parts(anchor.coords.into(), nadir_orientation(heading));

    let ik = IkConfig::default();
    let q_approach = chain.inverse_kinematics(&approach, q_seed, &ik)?.q;

    let mut samples = Vec::new();
    let mut prev_offset = Vector3::zeros();
    let mut prev_angle = 0.0;
    let mut prev_force = profile.keyframes.first().map_or(0.0, |k| k.force);
    let mut q_check = q_approach.clone();
    let mut t = 0.0;
    for (index, kf) in profile.keyframes.iter().enumerate() {
        let offset = frame_offset(&kf.offset);
        let n = (kf.duration / dt).round().max(1.0) as usize;
        for i in 1..=n {
            let s = i as f64 / n as f64;
            let position = anchor + prev_offset.lerp(&offset, s);
            let angle = prev_angle + (kf.angle - prev_angle) * s;
            t += dt;
            samples.push(PathSample {
                time: t,
                pose: Pose3::from_parts(position.coords.into(), lever_orientation(heading, angle)),
                angle,
                force: prev_force + (kf.force - prev_force) * s,
                keyframe: index,
                extract: kf.extract,
            });
        }
        // The keyframe must also be reachable at working depth.
        let mut working = samples.last().expect("n ≥ 1").pose;
        working.translation.vector -= Vector3::z() * profile.approach_height;
        q_check = chain.inverse_kinematics(&working, &q_check, &ik)?.q;
        prev_offset = offset;
        prev_angle = kf.angle;
        prev_force = kf.force;
    }
    Ok(CartesianPath { dt, approach, q_approach, heading, samples })
}

/// A weed the tool can currently act on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeedContact {
    pub id: u32,
    pub extraction_force: f64,
    pub removed: bool,
}

/// Arm plus the gripping side of the tool.
pub trait WeedingArm: CompliantArm {
    /// Nearest weed whose root is within `radius` of `point` (arm base frame).
    fn weed_near(&self, point: &Point3<f64>, radius: f64) -> Option<WeedContact>;
    /// Pulls the weed out; false if it was already gone.
    fn extract(&mut self, id: u32) -> bool;
    fn platform_stationary(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeedingPhase {
    Approach,
    Descent,
    Lever,
    Escalation,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Time since the start of the weeding action, s.
    pub time: f64,
    pub phase: WeedingPhase,
    /// Achieved TCP position, arm base frame, m.
    pub flange: [f64; 3],
    /// Achieved lever rotation, rad.
    pub angle: f64,
    /// Commanded lever rotation, rad.
    pub commanded_angle: f64,
    /// Filtered tool-z force, N.
    pub fz: f64,
    pub f_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedingOutcome {
    pub status: WeedingStatus,
    pub weed_id: Option<u32>,
    /// Peak filtered tool-z force, N.
    pub peak_force: f64,
    /// s
    pub duration: f64,
    /// Guarded-descent depth, m.
    pub delta_guard: Option<f64>,
    /// Horizontal distance between approach point and TCP at contact, m.
    pub approach_error: Option<f64>,
    /// Time into the action when the weed came out, s.
    pub removed_at: Option<f64>,
    pub final_setpoint: f64,
    /// Fraction of lever samples after 0.3 s with fz ≥ 0.5·F_set.
    pub contact_fraction: Option<f64>,
    /// Max horizontal TCP deviation from the compliant target, m.
    pub max_lateral_deviation: f64,
    pub detail: Option<String>,
    #[serde(skip)]
    pub trace: Vec<TraceSample>,
}

impl WeedingOutcome {
    fn new(status: WeedingStatus) -> Self {
        Self {
            status,
            weed_id: None,
            peak_force: 0.0,
            duration: 0.0,
            delta_guard: None,
            approach_error: None,
            removed_at: None,
            final_setpoint: 0.0,
            contact_fraction: None,
            max_lateral_deviation: 0.0,
            detail: None,
            trace: Vec::new(),
        }
    }
}

/// Rotation of `pose` about the lever axis relative to the nadir tool at `heading`.
pub fn achieved_lever_angle(pose: &Pose3, heading: f64) -> f64 {
    let rel = nadir_orientation(heading).inverse() * pose.rotation;
    let z = rel * Vector3::z();
    -z.x.atan2(z.z)
}

struct Run<'a> {
    arm: &'a mut dyn WeedingArm,
    sensor: &'a mut ForceSensor,
    dls: DlsConfig,
    heading: f64,
    t: f64,
    outcome: WeedingOutcome,
}

enum StepFailure {
    Jam(String),
    Fatal(WeedingError),
}

impl From<ArmError> for StepFailure {
    fn from(e: ArmError) -> Self {
        match e {
            ArmError::ToolJam { .. } => StepFailure::Jam(e.to_string()),
            ArmError::Aborted(m) => StepFailure::Fatal(WeedingError::Aborted(m)),
            ArmError::InvalidCommand(m) => StepFailure::Fatal(WeedingError::Arm(m)),
        }
    }
}

impl Run<'_> {
    fn step(&mut self, q: &[f64], phase: WeedingPhase, commanded_angle: f64, f_set: f64) -> Result<f64, StepFailure> {
        let signals = self.arm.step(q)?;
        let fz = self.sensor.process(&signals).fz;
        self.t += self.arm.dt();
        let pose = self.arm.flange_pose();
        self.outcome.peak_force = self.outcome.peak_force.max(fz);
        self.outcome.trace.push(TraceSample {
            time: self.t,
            phase,
            flange: pose.translation.vector.into(),
            angle: achieved_lever_angle(&pose, self.heading),
            commanded_angle,
            fz,
            f_set,
        });
        Ok(fz)
    }

    fn servo(&mut self, target: &Pose3) -> Result<Vec<f64>, KinematicsError> {
        servo_toward(self.arm.chain(), &self.arm.joints(), target, &self.dls, self.arm.dt())
    }
}

/// Runs the full weeding action on the root at `root` (arm base frame).
pub fn execute_weeding(
    arm: &mut dyn WeedingArm,
    sensor: &mut ForceSensor,
    root: &Point3<f64>,
    profile: &WeedingProfile,
) -> Result<WeedingOutcome, WeedingError> {
    profile.validate()?;
    if !arm.platform_stationary() {
        return Err(WeedingError::PlatformMoving);
    }
    let dt = arm.dt();
    let path = match generate_tool_path(arm.chain(), root, profile, &arm.joints(), dt) {
        Ok(p) => p,
        Err(e) => {
            let mut out = WeedingOutcome::new(WeedingStatus::IkFailure);
            out.detail = Some(e.to_string());
            return Ok(out);
        }
    };
    let weed = arm.weed_near(root, profile.grip_radius);
    let mut run = Run {
        arm,
        sensor,
        dls: DlsConfig::default(),
        heading: path.heading,
        t: 0.0,
        outcome: WeedingOutcome::new(WeedingStatus::Removed),
    };
    run.outcome.weed_id = weed.map(|w| w.id);
    match run_phases(&mut run, &path, profile, weed) {
        Ok(()) => {}
        Err(StepFailure::Jam(detail)) => {
            run.outcome.status = WeedingStatus::ToolJam;
            run.outcome.detail = Some(detail);
        }
        Err(StepFailure::Fatal(e)) => return Err(e),
    }
    run.outcome.duration = run.t;
    Ok(run.outcome)
}

fn classify_force_error(e: ForceControlError) -> Result<(WeedingStatus, String), StepFailure> {
    let detail = e.to_string();
    match e {
        ForceControlError::NoContact { .. } => Ok((WeedingStatus::NoContact, detail)),
        ForceControlError::Kinematics(_) => Ok((WeedingStatus::IkFailure, detail)),
        ForceControlError::Arm(a) => Err(a.into()),
        other => Err(StepFailure::Fatal(WeedingError::InvalidProfile(other.to_string()))),
    }
}

struct Follower {
    comp: ComplianceState,
    fz: f64,
    held: f64,
    /// (in contact, counted) lever samples after the settling window
    contact: (usize, usize),
    lever_start: Option<f64>,
    removed: bool,
}

impl Follower {
    /// One compliant cycle along `nominal`; false when the servo failed and
    /// the outcome already carries the failure.
    #[allow(clippy::too_many_arguments)]
    fn follow(
        &mut self,
        run: &mut Run<'_>,
        profile: &WeedingProfile,
        nominal: &Pose3,
        angle: f64,
        f_set: f64,
        extract: bool,
        phase: WeedingPhase,
    ) -> Result<bool, StepFailure> {
        self.comp.f_set = f_set;
        let (target, next) = compliant_step(nominal, &self.comp, self.fz);
        self.comp = next;
        let q = match run.servo(&target) {
            Ok(q) => q,
            Err(e) => {
                run.outcome.status = WeedingStatus::IkFailure;
                run.outcome.detail = Some(e.to_string());
                return Ok(false);
            }
        };
        self.fz = run.step(&q, phase, angle, f_set)?;
        let tip = run.arm.flange_pose().translation.vector;
        let dev = tip - target.translation.vector;
        run.outcome.max_lateral_deviation = run.outcome.max_lateral_deviation.max(dev.xy().norm());
        if phase == WeedingPhase::Lever && extract {
            let start = *self.lever_start.get_or_insert(run.t);
            if run.t - start > 0.3 {
                self.contact.1 += 1;
                if self.fz >= 0.5 * f_set {
                    self.contact.0 += 1;
                }
            }
        }
        if extract && !self.removed {
            match run.arm.weed_near(&Point3::from(tip), profile.grip_radius) {
                Some(w) => {
                    if self.fz >= w.extraction_force - profile.extraction_tolerance {
                        self.held += run.arm.dt();
                    } else {
                        self.held = 0.0;
                    }
                    if self.held + 1e-9 >= profile.hold_time && run.arm.extract(w.id) {
                        self.removed = true;
                        run.outcome.weed_id = Some(w.id);
                        run.outcome.removed_at = Some(run.t);
                    }
                }
                None => self.held = 0.0,
            }
        }
        Ok(true)
    }
}

fn run_phases(run: &mut Run<'_>, path: &CartesianPath, profile: &WeedingProfile, weed: Option<WeedContact>) -> Result<(), StepFailure> {
    let dt = path.dt;
    // Approach: point-to-point in joint space, then settle on the Cartesian pose.
    let q_now = run.arm.joints();
    let traj = run.arm.chain().plan_ptp(&q_now, &path.q_approach, dt).map_err(|e| StepFailure::Fatal(WeedingError::Arm(e.to_string())))?;
    for q in traj.positions.iter().skip(1) {
        run.step(q, WeedingPhase::Approach, 0.0, 0.0)?;
    }
    for _ in 0..20 {
        let dist = (run.arm.flange_pose().translation.vector - path.approach.translation.vector).norm();
        if dist < 1e-5 {
            break;
        }
        let q = run.arm.joints();
        let q = run.arm.chain().inverse_kinematics(&path.approach, &q, &IkConfig::default()).map(|s| s.q).unwrap_or(q);
        run.step(&q, WeedingPhase::Approach, 0.0, 0.0)?;
    }

    if weed.is_some_and(|w| w.removed) {
        run.outcome.detail = Some("weed already removed".into());
        return Ok(());
    }

    let descent = match guarded_descent(&mut *run.arm, run.sensor, &profile.descent, &run.dls) {
        Ok(d) => d,
        Err(e) => {
            let (status, detail) = classify_force_error(e)?;
            run.outcome.status = status;
            run.outcome.detail = Some(detail);
            return Ok(());
        }
    };
    run.t += descent.steps as f64 * dt + dt;
    let axis = descent.axis;
    let contact = descent.contact_pose.translation.vector;
    let offset = contact - path.approach.translation.vector;
    run.outcome.delta_guard = Some(descent.delta_guard);
    run.outcome.approach_error = Some((offset - axis * offset.dot(&axis)).norm());

    let comp = match ComplianceState::new(descent.delta_guard, axis, path.samples.first().map_or(0.0, |s| s.force), &profile.compliance) {
        Ok(c) => c,
        Err(e) => return Err(StepFailure::Fatal(WeedingError::InvalidProfile(e.to_string()))),
    };
    let mut f = Follower { comp, fz: descent.filtered_fz, held: 0.0, contact: (0, 0), lever_start: None, removed: false };
    for s in &path.samples {
        if !f.follow(run, profile, &s.pose, s.angle, s.force, s.extract, WeedingPhase::Lever)? {
            return Ok(());
        }
    }

    // Raise the setpoint in stages while the weed resists, ramping over the
    // first half of each stage so the loop does not overshoot the ceiling.
    let last = path.samples.last().expect("profile has keyframes");
    let mut f_set = last.force;
    let steps_per_stage = (profile.escalation_hold / dt).round().max(1.0) as usize;
    let ramp_steps = (steps_per_stage / 2).max(1);
    while !f.removed && !f.comp.saturated && profile.escalation_step > 0.0 && f_set + profile.escalation_step <= profile.max_force + 1e-9 {
        let from = f_set;
        f_set += profile.escalation_step;
        for i in 0..steps_per_stage {
            let r = ((i + 1) as f64 / ramp_steps as f64).min(1.0);
            let cmd = from + r * (f_set - from);
            if !f.follow(run, profile, &last.pose, last.angle, cmd, true, WeedingPhase::Escalation)? {
                return Ok(());
            }
            if f.removed {
                break;
            }
        }
    }
    let (removed, comp, contact_samples) = (f.removed, f.comp, f.contact);
    run.outcome.final_setpoint = f_set;
    if contact_samples.1 > 0 {
        run.outcome.contact_fraction = Some(contact_samples.0 as f64 / contact_samples.1 as f64);
    }
    run.outcome.status = if removed { WeedingStatus::Removed } else { WeedingStatus::ForceSaturation };
    if !removed {
        run.outcome.detail = Some(if comp.saturated {
            "force correction reached its clamp".into()
        } else {
            format!("weed not released at {f_set:.0} N")
        });
    }

    // Retreat back up to the approach pose.
    let start = run.arm.flange_pose();
    let n = (profile.retreat_duration / dt).round().max(1.0) as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let target = start.lerp_slerp(&path.approach, s);
        let q = run.servo(&target).unwrap_or_else(|_| run.arm.joints());
        run.step(&q, WeedingPhase::Retreat, 0.0, 0.0)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_is_valid() {
        let p = WeedingProfile::default();
        p.validate().unwrap();
        assert!((p.total_duration() - 4.0).abs() < 1e-12);
        assert_eq!(p.peak_setpoint(), 50.0);
    }

    #[test]
    fn profile_validation() {
        let mut p = WeedingProfile::default();
        p.keyframes[0].duration = 0.0;
        assert!(p.validate().is_err());
        let mut p = WeedingProfile::default();
        p.keyframes[1].force = 151.0;
        assert!(p.validate().is_err());
        let mut p = WeedingProfile::default();
        p.keyframes[2].angle = 0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn approach_above_root() {
        let chain = KinematicChain::default();
        let root = Point3::new(0.45, 0.0, -0.40);
        let q0 = crate::sim_world::default_stow_joints();
        let path = generate_tool_path(&chain, &root, &WeedingProfile::default(), &q0, 0.01).unwrap();
        assert!((path.approach.translation.vector - Vector3::new(0.45, 0.0, -0.30)).norm() < 1e-12);
        let fk = chain.fk_unchecked(&path.q_approach);
        assert!((fk.translation.vector - path.approach.translation.vector).norm() < 1e-4);
    }

    #[test]
    fn lever_sweeps_monotonically() {
        let chain = KinematicChain::default();
        let q0 = crate::sim_world::default_stow_joints();
        let p = WeedingProfile::default();
        let path = generate_tool_path(&chain, &Point3::new(0.45, 0.1, -0.40), &p, &q0, 0.01).unwrap();
        assert_eq!(path.samples.len(), 400);
        let angles: Vec<f64> = path.samples.iter().map(|s| achieved_lever_angle(&s.pose, path.heading)).collect();
        assert!(angles.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((angles.last().unwrap() - 40f64.to_radians()).abs() < 1e-9);
        let step = path.samples.windows(2).map(|w| (w[1].pose.translation.vector - w[0].pose.translation.vector).norm()).fold(0.0, f64::max);
        assert!(step <= p.v_cart_max * 0.01);
    }

    #[test]
    fn far_root_is_ik_failure() {
        let chain = KinematicChain::default();
        let q0 = crate::sim_world::default_stow_joints();
        let err = generate_tool_path(&chain, &Point3::new(3.0, 0.0, -0.4), &WeedingProfile::default(), &q0, 0.01);
        assert!(matches!(err, Err(KinematicsError::Unreachable { .. })));
    }
}
