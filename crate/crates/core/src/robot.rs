//! The robot as the control software sees it: the simulated hardware plus
//! the estimator and controllers, advanced one fixed period at a time.
//!
//! Every tick runs the same sequence: supervisor check, world step, sensor
//! sampling, EKF predict/update, trace recording.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm_kinematics::KinematicChain;
use crate::camera::{CameraModel, ColorImage, DepthImage};
use crate::force_control::{ArmError, CompliantArm, FilterState, ForceSensor, Wrench};
use crate::geometry::{Pose2D, Pose3};
use crate::localization::{ControlInput, LocationEstimator, NoiseConfig};
use crate::platform_control::{ControllerConfig, PlatformController};
use crate::sim_world::{SimError, WheelSpeeds, World};
use crate::weeding_action::{WeedContact, WeedingArm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorRates {
    pub gnss_hz: f64,
    pub compass_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self { gnss_hz: 1.0, compass_hz: 10.0 }
    }
}

/// What the supervisor wants after looking at the latest tick.
#[derive(Debug, Clone, PartialEq)]
pub enum SupervisorAction {
    Continue,
    Abort(String),
}

/// Hook called once per control period, before the world is stepped.
pub trait Supervisor {
    fn on_tick(&mut self, robot: &Robot) -> SupervisorAction;
}

/// One row of the fixed-rate log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub true_pose: Pose2D,
    pub est_pose: Pose2D,
    pub wheels: WheelSpeeds,
    pub joints: Vec<f64>,
    pub fz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RobotError {
    Sim(SimError),
    Aborted(String),
}

impl std::fmt::Display for RobotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RobotError::Sim(e) => write!(f, "{e}"),
            RobotError::Aborted(m) => write!(f, "aborted: {m}"),
        }
    }
}

impl std::error::Error for RobotError {}

impl From<RobotError> for ArmError {
    fn from(e: RobotError) -> Self {
        match e {
            RobotError::Sim(SimError::ToolJam { penetration, max }) => ArmError::ToolJam { penetration, max },
            RobotError::Sim(other) => ArmError::InvalidCommand(other.to_string()),
            RobotError::Aborted(m) => ArmError::Aborted(m),
        }
    }
}

pub struct Robot {
    pub world: World,
    pub estimator: LocationEstimator,
    pub platform: PlatformController,
    /// Monitoring copy of the force pipeline, fed every tick.
    pub monitor: ForceSensor,
    pub rates: SensorRates,
    pub record_trace: bool,
    trace: Vec<TickRecord>,
    supervisor: Option<Box<dyn Supervisor + Send>>,
    last_signals: [f64; 6],
}

impl Robot {
    pub fn new(world: World, noise: NoiseConfig, controller: ControllerConfig, rates: SensorRates) -> Self {
        let est = LocationEstimator::new(world.state().platform_pose, noise);
        let monitor = ForceSensor::new(world.sensor_calibration().clone(), FilterState::force_default(1.0 / world.dt()));
        Self {
            estimator: est,
            platform: PlatformController::new(controller),
            monitor,
            rates,
            record_trace: true,
            trace: Vec::new(),
            supervisor: None,
            last_signals: [0.0; 6],
            world,
        }
    }

    pub fn set_supervisor(&mut self, supervisor: Option<Box<dyn Supervisor + Send>>) -> Option<Box<dyn Supervisor + Send>> {
        std::mem::replace(&mut self.supervisor, supervisor)
    }

    pub fn dt(&self) -> f64 {
        self.world.dt()
    }

    pub fn time(&self) -> f64 {
        self.world.time()
    }

    pub fn trace(&self) -> &[TickRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TickRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn arm_mount(&self) -> Pose3 {
        *self.world.arm_mount()
    }

    pub fn estimated_pose(&self) -> Pose2D {
        self.estimator.pose()
    }

    pub fn joints(&self) -> &[f64] {
        &self.world.state().arm_joints
    }

    pub fn last_signals(&self) -> [f64; 6] {
        self.last_signals
    }

    pub fn filtered_wrench(&self) -> Wrench {
        self.monitor.filtered()
    }

    pub fn is_platform_moving(&self) -> bool {
        !self.world.state().wheel_speeds.is_zero()
    }

    /// Advances one control period.
    pub fn tick(&mut self, wheels: WheelSpeeds, arm_cmd: &[f64]) -> Result<[f64; 6], RobotError> {
        if let Some(mut sup) = self.supervisor.take() {
            let action = sup.on_tick(self);
            self.supervisor = Some(sup);
            if let SupervisorAction::Abort(reason) = action {
                return Err(RobotError::Aborted(reason));
            }
        }
        let dt = self.world.dt();
        self.world.step(wheels, arm_cmd, dt).map_err(RobotError::Sim)?;
        let step = self.world.state().step_index;

        let odo = self.world.sample_odometry();
        let imu = self.world.sample_imu();
        let (v, _) = odo.body_velocity(self.world.config().platform.wheelbase);
        // Estimator inputs are already validated finite by construction.
        let _ = self.estimator.predict(ControlInput { v, omega: imu.yaw_rate }, dt);
        if Self::due(step, self.rates.compass_hz, dt) {
            let _ = self.estimator.update_compass(imu.compass_heading);
        }
        if Self::due(step, self.rates.gnss_hz, dt) {
            let fix = self.world.sample_gnss();
            let _ = self.estimator.update_gnss(&fix);
        }

        let signals = self.world.force_signals().map_err(RobotError::Sim)?;
        self.last_signals = signals;
        let wrench = self.monitor.process(&signals);
        if self.record_trace {
            let s = self.world.state();
            self.trace.push(TickRecord {
                time: s.time,
                true_pose: s.platform_pose,
                est_pose: self.estimator.pose(),
                wheels: s.wheel_speeds,
                joints: s.arm_joints.clone(),
                fz: wrench.fz,
            });
        }
        Ok(signals)
    }

    fn due(step: u64, rate_hz: f64, dt: f64) -> bool {
        if !(rate_hz > 0.0) {
            return false;
        }
        let period = (1.0 / (rate_hz * dt)).round().max(1.0) as u64;
        step % period == 0
    }

    /// Steps with the wheels ramping to zero and the arm held.
    pub fn brake(&mut self) -> Result<(), RobotError> {
        let q = self.joints().to_vec();
        while self.is_platform_moving() {
            let w = self.platform.shape(WheelSpeeds::ZERO, self.dt());
            self.tick(w, &q)?;
        }
        Ok(())
    }

    /// Camera model (platform frame extrinsic) from the measured joints.
    pub fn camera_model(&self) -> CameraModel {
        let extrinsic = self.arm_mount() * self.world.chain().fk_unchecked(self.joints()) * *self.world.camera_mount();
        CameraModel { intrinsics: self.world.config().camera, extrinsic }
    }

    pub fn capture(&mut self) -> Result<(ColorImage, DepthImage), SimError> {
        self.world.render_camera()
    }

    /// Arm-base point to world frame under the true platform pose.
    fn arm_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.world.state().platform_pose.to_isometry() * (self.arm_mount() * p)
    }

    /// Platform-frame point to arm-base frame.
    pub fn platform_to_arm(&self, p: &Point3<f64>) -> Point3<f64> {
        self.arm_mount().inverse_transform_point(p)
    }

    pub fn platform_to_world_estimated(&self, p: &Point3<f64>) -> Point3<f64> {
        self.estimator.pose().to_isometry() * p
    }

    pub fn world_to_platform_estimated(&self, p: &Point3<f64>) -> Point3<f64> {
        self.estimator.pose().to_isometry().inverse_transform_point(p)
    }

    pub fn tool_axis_world(&self) -> Vector3<f64> {
        self.world.tool_axis_world()
    }
}

impl CompliantArm for Robot {
    fn dt(&self) -> f64 {
        self.world.dt()
    }

    fn chain(&self) -> &KinematicChain {
        self.world.chain()
    }

    fn joints(&self) -> Vec<f64> {
        self.world.state().arm_joints.clone()
    }

    fn step(&mut self, q_target: &[f64]) -> Result<[f64; 6], ArmError> {
        let w = self.platform.shape(WheelSpeeds::ZERO, self.world.dt());
        Ok(self.tick(w, q_target)?)
    }
}

impl WeedingArm for Robot {
    fn weed_near(&self, point: &Point3<f64>, radius: f64) -> Option<WeedContact> {
        let world_point = self.arm_to_world(point);
        self.world.weed_near(&world_point, radius).map(|w| WeedContact { id: w.id, extraction_force: w.extraction_force, removed: w.removed })
    }

    fn extract(&mut self, id: u32) -> bool {
        self.world.remove_weed(id)
    }

    fn platform_stationary(&self) -> bool {
        !self.is_platform_moving()
    }
}
