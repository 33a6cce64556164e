//! Executes mission commands on a [`Robot`]: drive to a weed, photograph
//! it, pull it. Also collects the per-run measurements and trace exports.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_kinematics::IkConfig;
use crate::force_control::{FilterState, ForceSensor};
use crate::geometry::{nadir_orientation, wrap_angle, Point2, Pose3};
use crate::mission_control::{dispatch, Command, LogRecord, Mission, MissionError, TaskEvent, TaskKind, TaskStatus};
use crate::platform_control::{body_to_wheels, Path};
use crate::robot::{Robot, RobotError};
use crate::sim_world::{default_stow_joints, SimError, WheelSpeeds};
use crate::weed_detection::{detect_weed, DetectionConfig, WeedHypothesis};
use crate::weeding_action::{execute_weeding, tool_heading_for, TraceSample, WeedingError, WeedingOutcome, WeedingPhase, WeedingProfile, WeedingStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    /// Distance from the platform origin to the point under the arm where
    /// weeds are worked, along the platform x axis, m.
    pub work_offset: f64,
    /// m
    pub arrival_tolerance: f64,
    /// Stop radius around the transfer goal (estimated pose), m.
    pub final_tolerance: f64,
    /// s
    pub transfer_timeout: f64,
    /// Final in-place alignment: range error to the work offset, m.
    pub align_range_tolerance: f64,
    /// Final in-place alignment: bearing error, rad.
    pub align_heading_tolerance: f64,
    /// s
    pub align_timeout: f64,
    /// Camera heights above the nominal ground tried in order, m.
    pub capture_heights: Vec<f64>,
    /// Joint configuration while driving.
    pub stow_joints: Vec<f64>,
    /// Simulated-time budget for a whole mission, s.
    pub mission_time_limit: f64,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            work_offset: 0.65,
            arrival_tolerance: Path::DEFAULT_TOLERANCE,
            final_tolerance: 0.1,
            transfer_timeout: 120.0,
            align_range_tolerance: 0.02,
            align_heading_tolerance: 0.02,
            align_timeout: 15.0,
            capture_heights: vec![0.6, 0.5, 0.45, 0.4],
            stow_joints: default_stow_joints(),
            mission_time_limit: 600.0,
        }
    }
}

/// Everything a task routine needs besides the robot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSettings {
    pub runner: RunnerConfig,
    pub detection: DetectionConfig,
    pub weeding: WeedingProfile,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    /// The task could not complete; the mission policy decides what follows.
    #[error("{0}")]
    Failed(String),
    /// External stop (pause, estop) while the task was running.
    #[error("interrupted: {0}")]
    Interrupted(String),
}

impl From<RobotError> for TaskError {
    fn from(e: RobotError) -> Self {
        match e {
            RobotError::Aborted(m) => TaskError::Interrupted(m),
            RobotError::Sim(s) => TaskError::Failed(s.to_string()),
        }
    }
}

impl From<WeedingError> for TaskError {
    fn from(e: WeedingError) -> Self {
        match e {
            WeedingError::Aborted(m) => TaskError::Interrupted(m),
            other => TaskError::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub target: Point2,
    /// True work point to commanded weed location, m (scoring only).
    pub positioning_error: f64,
    /// Same distance under the estimated pose, m.
    pub estimated_error: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureReport {
    pub hypothesis: WeedHypothesis,
    pub camera_height: f64,
    /// Detected root to true root, m (scoring only).
    pub detection_error: Option<f64>,
}

/// Where the work point sits for a platform pose.
pub fn work_point(pose: &crate::geometry::Pose2D, offset: f64) -> Point2 {
    Point2::new(pose.x + offset * pose.yaw.cos(), pose.y + offset * pose.yaw.sin())
}

/// Platform goal that puts the work point on `target` when approached from `from`.
pub fn transfer_goal(from: Point2, fallback_yaw: f64, target: Point2, offset: f64) -> Point2 {
    let (dx, dy) = (target.x - from.x, target.y - from.y);
    let d = dx.hypot(dy);
    let (ux, uy) = if d > 1e-6 { (dx / d, dy / d) } else { (fallback_yaw.cos(), fallback_yaw.sin()) };
    Point2::new(target.x - offset * ux, target.y - offset * uy)
}

/// Point-to-point arm motion with the platform held.
pub fn move_arm_to(robot: &mut Robot, q_target: &[f64]) -> Result<(), TaskError> {
    let q = robot.joints().to_vec();
    let traj = robot.world.chain().plan_ptp(&q, q_target, robot.dt()).map_err(|e| TaskError::Failed(e.to_string()))?;
    for row in traj.positions.iter().skip(1) {
        let w = robot.platform.shape(WheelSpeeds::ZERO, robot.dt());
        robot.tick(w, row)?;
    }
    Ok(())
}

pub fn transfer_platform(robot: &mut Robot, target: Point2, config: &RunnerConfig) -> Result<TransferReport, TaskError> {
    let start = robot.time();
    if robot.joints().iter().zip(&config.stow_joints).any(|(a, b)| (a - b).abs() > 1e-6) {
        move_arm_to(robot, &config.stow_joints)?;
    }
    let est = robot.estimated_pose();
    let goal = transfer_goal(est.position(), est.yaw, target, config.work_offset);
    let path = Path::with_tolerances(vec![goal], config.arrival_tolerance, config.final_tolerance).map_err(|e| TaskError::Failed(e.to_string()))?;
    robot.platform.set_path(path);
    let q = robot.joints().to_vec();
    let dt = robot.dt();
    let result = loop {
        let (w, finished) = match robot.platform.update(&robot.estimated_pose(), dt) {
            Ok(x) => x,
            Err(e) => break Err(TaskError::Failed(e.to_string())),
        };
        if finished {
            break Ok(());
        }
        if robot.time() - start > config.transfer_timeout {
            break Err(TaskError::Failed(format!("transfer not finished after {:.0} s", config.transfer_timeout)));
        }
        if let Err(e) = robot.tick(w, &q) {
            break Err(e.into());
        }
    };
    robot.platform.clear_path();
    if !matches!(result, Err(TaskError::Interrupted(_))) {
        robot.brake()?;
    }
    result?;
    align_to(robot, target, config, &q)?;
    let truth = robot.world.state().platform_pose;
    Ok(TransferReport {
        target,
        positioning_error: work_point(&truth, config.work_offset).distance(&target),
        estimated_error: work_point(&robot.estimated_pose(), config.work_offset).distance(&target),
        duration: robot.time() - start,
    })
}

/// Turns in place to face `target`, then creeps along the heading until it
/// sits `work_offset` away, both on the estimated pose. Gives up quietly at
/// the timeout; the arm absorbs what is left.
fn align_to(robot: &mut Robot, target: Point2, config: &RunnerConfig, q: &[f64]) -> Result<(), TaskError> {
    let start = robot.time();
    let dt = robot.dt();
    let c = robot.platform.config.clone();
    loop {
        let est = robot.estimated_pose();
        let bearing = (target.y - est.y).atan2(target.x - est.x);
        let heading_err = wrap_angle(bearing - est.yaw);
        let range_err = est.position().distance(&target) - config.work_offset;
        let aligned = heading_err.abs() < config.align_heading_tolerance && range_err.abs() < config.align_range_tolerance;
        if aligned || robot.time() - start > config.align_timeout {
            break;
        }
        let v = if heading_err.abs() < 0.1 { (c.kv * range_err).clamp(-0.2, 0.2) } else { 0.0 };
        let raw = body_to_wheels(v, c.komega * heading_err, c.wheelbase, c.max_wheel_speed);
        let w = robot.platform.shape(raw, dt);
        robot.tick(w, q)?;
    }
    robot.brake()?;
    Ok(())
}

/// Tool pose (arm frame) that puts the camera at `height` over `ground_point` (platform frame).
fn capture_tool_pose(robot: &Robot, ground_point: &Point3<f64>, height: f64) -> Pose3 {
    let arm_point = robot.platform_to_arm(ground_point);
    let heading = tool_heading_for(&arm_point);
    let cam = Pose3::from_parts((arm_point.coords + Vector3::new(0.0, 0.0, height)).into(), nadir_orientation(heading));
    cam * robot.world.camera_mount().inverse()
}

pub fn acquire_image(robot: &mut Robot, expected: Point2, config: &RunnerConfig, detection: &DetectionConfig) -> Result<CaptureReport, TaskError> {
    let ground_z = robot.world.config().ground.base_height;
    let ground = robot.world_to_platform_estimated(&Point3::new(expected.x, expected.y, ground_z));
    let q0 = robot.joints().to_vec();
    let chain = robot.world.chain().clone();
    let solved = config.capture_heights.iter().find_map(|&h| {
        let target = capture_tool_pose(robot, &ground, h);
        chain.inverse_kinematics(&target, &q0, &IkConfig::default()).ok().map(|s| (h, s.q))
    });
    let Some((height, q)) = solved else {
        return Err(TaskError::Failed("no reachable camera pose over the weed".into()));
    };
    move_arm_to(robot, &q)?;
    let (color, depth) = robot.capture().map_err(|e| TaskError::Failed(e.to_string()))?;
    let cam = robot.camera_model();
    let hypothesis = detect_weed(&color, &depth, &cam, detection).map_err(|e| TaskError::Failed(e.to_string()))?;
    let world_root = robot.world.state().platform_pose.to_isometry() * hypothesis.root();
    let detection_error = robot
        .world
        .state()
        .weeds
        .iter()
        .filter(|w| !w.removed)
        .map(|w| (w.root() - world_root).norm())
        .min_by(f64::total_cmp);
    Ok(CaptureReport { hypothesis, camera_height: height, detection_error })
}

pub fn weeding_task(robot: &mut Robot, root_platform: [f64; 3], settings: &TaskSettings) -> Result<WeedingOutcome, TaskError> {
    let root = robot.platform_to_arm(&Point3::from(root_platform));
    let mut sensor = ForceSensor::new(robot.world.sensor_calibration().clone(), FilterState::force_default(1.0 / robot.dt()));
    let outcome = execute_weeding(robot, &mut sensor, &root, &settings.weeding)?;
    move_arm_to(robot, &settings.runner.stow_joints)?;
    Ok(outcome)
}

/// Largest |fz − F_set| over the lever phase once `settle` seconds have passed since contact.
pub fn steady_state_error(trace: &[TraceSample], settle: f64) -> Option<f64> {
    let start = trace.iter().find(|s| s.phase == WeedingPhase::Lever)?.time;
    trace
        .iter()
        .filter(|s| s.phase == WeedingPhase::Lever && s.time >= start + settle - 1e-9)
        .map(|s| (s.fz - s.f_set).abs())
        .max_by(f64::total_cmp)
}

/// Sample set for one performance measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub tolerance: f64,
    pub samples: Vec<f64>,
    pub max: Option<f64>,
    pub within: usize,
}

impl Measure {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance, samples: Vec::new(), max: None, within: 0 }
    }

    pub fn push(&mut self, value: f64) {
        self.samples.push(value);
        self.max = Some(self.max.map_or(value, |m| m.max(value)));
        if value <= self.tolerance {
            self.within += 1;
        }
    }

    pub fn pass_rate(&self) -> Option<f64> {
        (!self.samples.is_empty()).then(|| self.within as f64 / self.samples.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weeds: usize,
    pub removed: usize,
    pub skipped: usize,
    pub outcomes: BTreeMap<String, usize>,
    /// Work point to weed-map location after each transfer, m.
    pub platform_positioning: Measure,
    /// Detected to true root, m.
    pub detection_accuracy: Measure,
    /// Approach point to TCP at contact, m.
    pub tool_positioning: Measure,
    /// Steady-state |fz − F_set| in the lever phase, N.
    pub force_regulation: Measure,
    pub peak_force: f64,
    pub simulated_time: f64,
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            weeds: 0,
            removed: 0,
            skipped: 0,
            outcomes: BTreeMap::new(),
            platform_positioning: Measure::new(0.25),
            detection_accuracy: Measure::new(0.02),
            tool_positioning: Measure::new(0.005),
            force_regulation: Measure::new(1.0),
            peak_force: 0.0,
            simulated_time: 0.0,
        }
    }
}

/// Settling time before the force is scored, s.
pub const FORCE_SETTLE_TIME: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedingRecord {
    pub weed_id: u32,
    /// Simulated time the action started, s.
    pub started_at: f64,
    pub outcome: WeedingOutcome,
    #[serde(skip)]
    pub trace: Vec<TraceSample>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Protocol(#[from] MissionError),
    #[error("invariant breach: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    /// A task finished or failed; more remain.
    Continue,
    Complete,
    /// The running task was stopped and put back to pending.
    Interrupted(String),
}

/// Drives a [`Mission`] one task at a time.
#[derive(Debug, Clone)]
pub struct MissionExecutor {
    pub mission: Mission,
    pub command: Option<Command>,
    pub log: Vec<LogRecord>,
    pub metrics: Metrics,
    pub weeding: Vec<WeedingRecord>,
    pub last_detection: Option<WeedHypothesis>,
}

impl MissionExecutor {
    pub fn new(mission: Mission) -> Self {
        let metrics = Metrics { weeds: mission.weeds.len(), ..Metrics::default() };
        Self { mission, command: None, log: Vec::new(), metrics, weeding: Vec::new(), last_detection: None }
    }

    pub fn is_complete(&self) -> bool {
        self.mission.is_complete()
    }

    fn apply(&mut self, time: f64, event: TaskEvent, outcome: Option<&WeedingOutcome>) -> Result<(), RunError> {
        let (mut next, command) = dispatch(&self.mission, &event)?;
        let value = outcome.and_then(|o| serde_json::to_value(o).ok());
        for transition in next.drain_log() {
            let attach = transition.kind == TaskKind::WeedingAction && transition.to.is_terminal();
            self.log.push(LogRecord { time, transition, outcome: if attach { value.clone() } else { None } });
        }
        self.mission = next;
        self.check_order()?;
        self.command = Some(command);
        Ok(())
    }

    /// Task-order invariant over the current mission state.
    fn check_order(&self) -> Result<(), RunError> {
        let tasks = &self.mission.tasks;
        if tasks.iter().filter(|t| t.status == TaskStatus::Running).count() > 1 {
            return Err(RunError::Invariant("more than one task running".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.status != TaskStatus::Running {
                continue;
            }
            match t.kind {
                TaskKind::AcquireImage if tasks[i - 1].status != TaskStatus::Done => {
                    return Err(RunError::Invariant(format!("image acquisition for weed {} started before its transfer finished", t.weed_id)));
                }
                TaskKind::WeedingAction if t.root_platform.is_none() => {
                    return Err(RunError::Invariant(format!("weeding of weed {} started without a root position", t.weed_id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Marks the next task running if none is; [`step`](Self::step) does this itself.
    pub fn begin(&mut self, time: f64) -> Result<(), RunError> {
        if self.command.is_none() || self.mission.running().is_none() {
            self.apply(time, TaskEvent::Start, None)?;
        }
        Ok(())
    }

    /// Runs the next task to completion (or interruption).
    pub fn step(&mut self, robot: &mut Robot, settings: &TaskSettings) -> Result<Progress, RunError> {
        self.begin(robot.time())?;
        let command = self.command.clone().unwrap_or(Command::Stop);
        let (task, result, outcome) = match command {
            Command::Stop => {
                self.finish(robot);
                return Ok(Progress::Complete);
            }
            Command::NavigateTo { task, target, .. } => {
                let r = transfer_platform(robot, target, &settings.runner).map(|rep| {
                    self.metrics.platform_positioning.push(rep.positioning_error);
                    None
                });
                (task, r, None)
            }
            Command::Capture { task, expected, .. } => {
                let r = acquire_image(robot, expected, &settings.runner, &settings.detection).map(|rep| {
                    if let Some(e) = rep.detection_error {
                        self.metrics.detection_accuracy.push(e);
                    }
                    let root = rep.hypothesis.root_platform;
                    self.last_detection = Some(rep.hypothesis);
                    Some(root)
                });
                (task, r, None)
            }
            Command::WeedAt { task, weed_id, root_platform } => {
                let started_at = robot.time();
                match weeding_task(robot, root_platform, settings) {
                    Ok(outcome) => {
                        self.record_weeding(weed_id, started_at, &outcome);
                        let r = if outcome.status == WeedingStatus::Removed { Ok(None) } else { Err(TaskError::Failed(outcome.status.as_str().into())) };
                        (task, r, Some(outcome))
                    }
                    Err(e) => (task, Err(e), None),
                }
            }
        };
        let event = match result {
            Ok(root_platform) => TaskEvent::Done { task, root_platform },
            Err(TaskError::Failed(reason)) => TaskEvent::Failed { task, reason },
            Err(TaskError::Interrupted(reason)) => {
                self.interrupt(robot.time());
                return Ok(Progress::Interrupted(reason));
            }
        };
        self.apply(robot.time(), event, outcome.as_ref())?;
        if self.command == Some(Command::Stop) {
            self.finish(robot);
            Ok(Progress::Complete)
        } else {
            Ok(Progress::Continue)
        }
    }

    pub fn interrupt(&mut self, time: f64) {
        self.mission.interrupt();
        for transition in self.mission.drain_log() {
            self.log.push(LogRecord { time, transition, outcome: None });
        }
        self.command = None;
    }

    fn record_weeding(&mut self, weed_id: u32, started_at: f64, outcome: &WeedingOutcome) {
        *self.metrics.outcomes.entry(outcome.status.as_str().to_string()).or_default() += 1;
        if outcome.status == WeedingStatus::Removed {
            self.metrics.removed += 1;
        }
        if let Some(e) = outcome.approach_error {
            self.metrics.tool_positioning.push(e);
        }
        if let Some(e) = steady_state_error(&outcome.trace, FORCE_SETTLE_TIME) {
            self.metrics.force_regulation.push(e);
        }
        self.metrics.peak_force = self.metrics.peak_force.max(outcome.peak_force);
        let mut stored = outcome.clone();
        let trace = std::mem::take(&mut stored.trace);
        self.weeding.push(WeedingRecord { weed_id, started_at, outcome: stored, trace });
    }

    fn finish(&mut self, robot: &Robot) {
        self.metrics.simulated_time = robot.time();
        let removed: std::collections::BTreeSet<u32> = self.weeding.iter().filter(|w| w.outcome.status == WeedingStatus::Removed).map(|w| w.weed_id).collect();
        self.metrics.skipped = self.mission.weeds.iter().filter(|w| !removed.contains(&w.id)).count();
    }

    /// Runs every remaining task; stops early when interrupted or out of time.
    pub fn run(&mut self, robot: &mut Robot, settings: &TaskSettings) -> Result<Progress, RunError> {
        loop {
            if robot.time() > settings.runner.mission_time_limit {
                self.finish(robot);
                return Err(RunError::Invariant(format!("mission exceeded {:.0} s of simulated time", settings.runner.mission_time_limit)));
            }
            match self.step(robot, settings)? {
                Progress::Continue => {}
                other => return Ok(other),
            }
        }
    }
}

pub const TRACE_NAMES: [&str; 4] = ["flange_position", "flange_rotation", "contact_force", "platform"];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown trace '{0}'; available: flange_position, flange_rotation, contact_force, platform")]
pub struct UnknownTrace(pub String);

/// One weeding trace sample at absolute simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedingTraceRow {
    pub weed_id: u32,
    /// Simulated time since the run started, s. `sample.time` counts from the action start.
    #[serde(rename = "mission_time")]
    pub time: f64,
    #[serde(flatten)]
    pub sample: TraceSample,
}

pub fn weeding_rows(records: &[WeedingRecord]) -> Vec<WeedingTraceRow> {
    records
        .iter()
        .flat_map(|r| r.trace.iter().map(move |s| WeedingTraceRow { weed_id: r.weed_id, time: r.started_at + s.time, sample: *s }))
        .collect()
}

/// Writes one named trace as CSV.
pub fn write_trace_csv(what: &str, weeding: &[WeedingTraceRow], platform: &[crate::robot::TickRecord], out: &mut dyn Write) -> Result<(), std::io::Error> {
    match what {
        "flange_position" => {
            writeln!(out, "time_s,x_m,y_m,z_m")?;
            for r in weeding {
                let [x, y, z] = r.sample.flange;
                writeln!(out, "{},{},{},{}", r.time, x, y, z)?;
            }
        }
        "flange_rotation" => {
            writeln!(out, "time_s,angle_deg")?;
            for r in weeding {
                writeln!(out, "{},{}", r.time, r.sample.angle.to_degrees())?;
            }
        }
        "contact_force" => {
            writeln!(out, "time_s,fz_N")?;
            for r in weeding {
                writeln!(out, "{},{}", r.time, r.sample.fz)?;
            }
        }
        "platform" => {
            writeln!(out, "time_s,x_m,y_m,yaw_rad,est_x_m,est_y_m,est_yaw_rad,left_m_s,right_m_s")?;
            for r in platform {
                let (t, e, w) = (&r.true_pose, &r.est_pose, &r.wheels);
                writeln!(out, "{},{},{},{},{},{},{},{},{}", r.time, t.x, t.y, t.yaw, e.x, e.y, e.yaw, w.left, w.right)?;
            }
        }
        other => return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, UnknownTrace(other.to_string()))),
    }
    Ok(())
}

impl From<SimError> for TaskError {
    fn from(e: SimError) -> Self {
        TaskError::Failed(e.to_string())
    }
}
