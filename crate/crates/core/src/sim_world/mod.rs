//! Deterministic fixed-step simulated pasture.
//!
//! Stands in for every piece of hardware: the differential-drive platform,
//! the arm joints, spring-model ground contact, GNSS/IMU/odometry sensors,
//! the six-axis force sensor, and a rasterizing camera. Identical seeds and
//! command sequences produce bit-identical trajectories.

mod scene;

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scene::{render_scene, weed_pixel_color, SceneOptions, GRASS_BASE, LEAF_BASE};

use crate::arm_kinematics::{ChainSpec, KinematicChain, KinematicsError};
use crate::camera::{CameraIntrinsics, ColorImage, DepthImage};
use crate::force_control::{CalibrationMatrix, Wrench};
use crate::geometry::{wrap_angle, Pose2D, Pose3, TransformSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("time step {got} s does not match the configured {expected} s")]
    BadTimeStep { got: f64, expected: f64 },
    #[error("tool jammed: penetration {penetration:.4} m exceeds {max:.4} m")]
    ToolJam { penetration: f64, max: f64 },
    #[error("camera is below the ground surface")]
    CameraBelowSurface,
    #[error("camera looks {0:.1}° away from nadir (limit 60°)")]
    CameraNotDownward(f64),
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub left: f64,
    pub right: f64,
}

impl WheelSpeeds {
    pub const ZERO: WheelSpeeds = WheelSpeeds { left: 0.0, right: 0.0 };

    pub fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn is_finite(&self) -> bool {
        self.left.is_finite() && self.right.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.left == 0.0 && self.right == 0.0
    }

    /// Body (v, ω) for wheelbase `b`.
    pub fn body_velocity(&self, wheelbase: f64) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.right - self.left) / wheelbase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundModel {
    /// Mean surface height, m.
    pub base_height: f64,
    /// Amplitude of a sinusoidal surface undulation, m.
    pub undulation_amplitude: f64,
    pub undulation_wavelength: f64,
    /// Spring constant k, N/m.
    pub spring_constant: f64,
    /// Deepest penetration the tool survives, m.
    pub max_penetration: f64,
}

impl Default for GroundModel {
    fn default() -> Self {
        Self {
            base_height: 0.0,
            undulation_amplitude: 0.0,
            undulation_wavelength: 5.0,
            spring_constant: 10_000.0,
            max_penetration: 0.06,
        }
    }
}

impl GroundModel {
    pub fn surface_height(&self, x: f64, y: f64) -> f64 {
        if self.undulation_amplitude == 0.0 {
            return self.base_height;
        }
        let w = 2.0 * std::f64::consts::PI / self.undulation_wavelength;
        self.base_height + self.undulation_amplitude * (w * x).sin() * (w * y).sin()
    }

    pub fn penetration(&self, tip: &Point3<f64>) -> f64 {
        (self.surface_height(tip.x, tip.y) - tip.z).max(0.0)
    }

    /// Noiseless spring reaction at `tip`.
    pub fn contact_force(&self, tip: &Point3<f64>) -> Result<f64, SimError> {
        let penetration = self.penetration(tip);
        if penetration > self.max_penetration {
            return Err(SimError::ToolJam { penetration, max: self.max_penetration });
        }
        Ok(self.spring_constant * penetration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    /// m
    pub gnss_sigma: f64,
    /// rad/s
    pub gyro_sigma: f64,
    /// rad
    pub compass_sigma: f64,
    /// N
    pub force_sigma: f64,
    /// N·m
    pub torque_sigma: f64,
    /// Per-wheel encoder speed noise, m/s.
    pub odom_sigma: f64,
    /// m
    pub depth_sigma: f64,
    /// Probability that a GNSS fix is a gross outlier.
    pub gnss_outlier_prob: f64,
    pub gnss_outlier_magnitude: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gnss_sigma: 0.02,
            gyro_sigma: 0.005,
            compass_sigma: 0.05,
            force_sigma: 0.2,
            torque_sigma: 0.005,
            odom_sigma: 0.01,
            depth_sigma: 0.001,
            gnss_outlier_prob: 0.0,
            gnss_outlier_magnitude: 2.0,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        Self {
            gnss_sigma: 0.0,
            gyro_sigma: 0.0,
            compass_sigma: 0.0,
            force_sigma: 0.0,
            torque_sigma: 0.0,
            odom_sigma: 0.0,
            depth_sigma: 0.0,
            gnss_outlier_prob: 0.0,
            gnss_outlier_magnitude: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.gnss_sigma,
            self.gyro_sigma,
            self.compass_sigma,
            self.force_sigma,
            self.torque_sigma,
            self.odom_sigma,
            self.depth_sigma,
            self.gnss_outlier_magnitude,
        ];
        if all.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SimError::Config("noise sigmas must be finite and ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gnss_outlier_prob) {
            return Err(SimError::Config("gnss_outlier_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One leaf of a rosette: direction from the root, length and width in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub azimuth: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weed {
    pub id: u32,
    /// Root position in the world frame (ENU), m.
    pub root_position: [f64; 3],
    pub leaves: Vec<Leaf>,
    /// N
    pub extraction_force: f64,
    #[serde(default)]
    pub removed: bool,
}

impl Weed {
    /// Evenly spaced rosette of `count` identical leaves starting at `rotation`.
    pub fn rosette(id: u32, root: [f64; 3], count: usize, length: f64, width: f64, rotation: f64, extraction_force: f64) -> Self {
        let leaves = (0..count)
            .map(|i| Leaf {
                azimuth: wrap_angle(rotation + 2.0 * std::f64::consts::PI * i as f64 / count as f64),
                length,
                width,
            })
            .collect();
        Self { id, root_position: root, leaves, extraction_force, removed: false }
    }

    pub fn root(&self) -> Point3<f64> {
        Point3::from(self.root_position)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.root_position.iter().all(|v| v.is_finite()) {
            return Err(SimError::Config(format!("weed {} has a non-finite root", self.id)));
        }
        for leaf in &self.leaves {
            if !(leaf.length > leaf.width && leaf.width > 0.0) {
                return Err(SimError::Config(format!("weed {} leaf violates length > width > 0", self.id)));
            }
        }
        if !(20.0..=200.0).contains(&self.extraction_force) {
            return Err(SimError::Config(format!("weed {} extraction force outside [20, 200] N", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    /// Wheel separation B, m.
    pub wheelbase: f64,
    /// m/s
    pub max_wheel_speed: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self { wheelbase: 0.6, max_wheel_speed: 1.0 }
    }
}

/// Fixed mounting transforms between platform, arm and camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotGeometry {
    /// Arm base in the platform frame.
    pub arm_mount: TransformSpec,
    /// Camera optical frame relative to the TCP.
    pub camera_mount: TransformSpec,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            arm_mount: TransformSpec::translation(0.35, 0.0, 0.40),
            camera_mount: TransformSpec::translation(0.06, 0.0, -0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    /// Fixed control/simulation step, s.
    pub dt: f64,
    pub platform: PlatformConfig,
    pub ground: GroundModel,
    pub noise: SensorNoise,
    pub camera: CameraIntrinsics,
    pub scene: SceneOptions,
    pub geometry: RobotGeometry,
    pub chain: ChainSpec,
    /// Row-major 6×6 calibration of the simulated force sensor.
    pub sensor_calibration: Option<[[f64; 6]; 6]>,
    pub start_pose: Pose2D,
    pub start_joints: Vec<f64>,
    pub weeds: Vec<Weed>,
}

/// Joint configuration the arm is parked in while driving.
pub fn default_stow_joints() -> Vec<f64> {
    vec![0.0, -0.35, 2.2, 0.0, 1.2, 0.0]
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dt: 0.01,
            platform: PlatformConfig::default(),
            ground: GroundModel::default(),
            noise: SensorNoise::default(),
            camera: CameraIntrinsics::default(),
            scene: SceneOptions::default(),
            geometry: RobotGeometry::default(),
            chain: ChainSpec::default_six_dof(),
            sensor_calibration: None,
            start_pose: Pose2D::default(),
            start_joints: default_stow_joints(),
            weeds: Vec::new(),
        }
    }
}

impl WorldConfig {
    pub fn calibration(&self) -> Result<CalibrationMatrix, SimError> {
        match &self.sensor_calibration {
            None => Ok(CalibrationMatrix::default()),
            Some(rows) => CalibrationMatrix::new(nalgebra::Matrix6::from_fn(|r, c| rows[r][c]))
                .map_err(|e| SimError::Config(e.to_string())),
        }
    }
}

/// Ground truth snapshot. Cloning yields an independent immutable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub step_index: u64,
    pub platform_pose: Pose2D,
    pub wheel_speeds: WheelSpeeds,
    pub arm_joints: Vec<f64>,
    pub weeds: Vec<Weed>,
    pub removed_ids: BTreeSet<u32>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssFix {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuReading {
    /// rad/s
    pub yaw_rate: f64,
    /// rad, wrapped to (-π, π]
    pub compass_heading: f64,
}

#[derive(Debug, Clone)]
struct SensorStreams {
    gnss: ChaCha8Rng,
    imu: ChaCha8Rng,
    odom: ChaCha8Rng,
    force: ChaCha8Rng,
    render_count: u64,
}

impl SensorStreams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self { gnss: stream(1), imu: stream(2), odom: stream(3), force: stream(4), render_count: 0 }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

/// Exact unicycle motion for constant (v, ω) over `dt`.
pub fn integrate_unicycle(pose: &Pose2D, v: f64, omega: f64, dt: f64) -> Pose2D {
    let yaw1 = pose.yaw + omega * dt;
    let (dx, dy) = if (omega * dt).abs() < 1e-9 {
        let mid = pose.yaw + 0.5 * omega * dt;
        (v * dt * mid.cos(), v * dt * mid.sin())
    } else {
        let r = v / omega;
        (r * (yaw1.sin() - pose.yaw.sin()), -r * (yaw1.cos() - pose.yaw.cos()))
    };
    Pose2D::new(pose.x + dx, pose.y + dy, yaw1)
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    chain: KinematicChain,
    arm_mount: Pose3,
    camera_mount: Pose3,
    calibration: CalibrationMatrix,
    state: WorldState,
    streams: SensorStreams,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, SimError> {
        if !(config.dt > 0.0) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if !(config.platform.wheelbase > 0.0 && config.platform.max_wheel_speed > 0.0) {
            return Err(SimError::Config("wheelbase and max wheel speed must be positive".into()));
        }
        if !(config.ground.spring_constant > 0.0 && config.ground.max_penetration > 0.0) {
            return Err(SimError::Config("ground spring constant and max penetration must be positive".into()));
        }
        if !config.camera.is_valid() {
            return Err(SimError::Config("camera intrinsics invalid".into()));
        }
        config.noise.validate()?;
        let mut ids = BTreeSet::new();
        for weed in &config.weeds {
            weed.validate()?;
            if !ids.insert(weed.id) {
                return Err(SimError::Config(format!("duplicate weed id {}", weed.id)));
            }
        }
        let chain = KinematicChain::from_spec(&config.chain)?;
        chain.check_limits(&config.start_joints)?;
        let calibration = config.calibration()?;
        let removed_ids = config.weeds.iter().filter(|w| w.removed).map(|w| w.id).collect();
        let state = WorldState {
            time: 0.0,
            step_index: 0,
            platform_pose: Pose2D::new(config.start_pose.x, config.start_pose.y, config.start_pose.yaw),
            wheel_speeds: WheelSpeeds::ZERO,
            arm_joints: config.start_joints.clone(),
            weeds: config.weeds.clone(),
            removed_ids,
            rng_seed: config.seed,
        };
        Ok(Self {
            arm_mount: config.geometry.arm_mount.to_isometry(),
            camera_mount: config.geometry.camera_mount.to_isometry(),
            streams: SensorStreams::new(config.seed),
            chain,
            calibration,
            state,
            config,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn arm_mount(&self) -> &Pose3 {
        &self.arm_mount
    }

    pub fn camera_mount(&self) -> &Pose3 {
        &self.camera_mount
    }

    pub fn sensor_calibration(&self) -> &CalibrationMatrix {
        &self.calibration
    }

    /// Advances one fixed step. Wheel commands are saturated at the
    /// actuator limit; arm targets are clamped to the joint limits and
    /// approached at no more than the joint velocity limit.
    pub fn step(&mut self, wheel_cmd: WheelSpeeds, arm_cmd: &[f64], dt: f64) -> Result<&WorldState, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::BadTimeStep { got: dt, expected: self.config.dt });
        }
        if (dt - self.config.dt).abs() > 1e-12 {
            return Err(SimError::BadTimeStep { got: dt, expected: self.config.dt });
        }
        if !wheel_cmd.is_finite() {
            return Err(SimError::InvalidCommand("non-finite wheel command".into()));
        }
        if arm_cmd.len() != self.chain.dof() || !arm_cmd.iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidCommand("arm command must hold one finite target per joint".into()));
        }
        let vmax = self.config.platform.max_wheel_speed;
        let wheels = WheelSpeeds::new(wheel_cmd.left.clamp(-vmax, vmax), wheel_cmd.right.clamp(-vmax, vmax));
        let (v, omega) = wheels.body_velocity(self.config.platform.wheelbase);

        let max_dq = self.chain.vel_limit * dt;
        let mut joints = self.state.arm_joints.clone();
        for ((q, target), joint) in joints.iter_mut().zip(arm_cmd).zip(&self.chain.joints) {
            let target = target.clamp(-joint.limit, joint.limit);
            let velocity = ((target - *q) / dt).clamp(-self.chain.vel_limit, self.chain.vel_limit);
            *q = if (target - *q).abs() <= max_dq { target } else { *q + velocity * dt };
        }

        let pose = integrate_unicycle(&self.state.platform_pose, v, omega, dt);
        let tip = self.tool_tip_for(&pose, &joints);
        let penetration = self.config.ground.penetration(&tip);
        if penetration > self.config.ground.max_penetration {
            // The tool cannot go deeper; the arm keeps its previous joints.
            return Err(SimError::ToolJam { penetration, max: self.config.ground.max_penetration });
        }

        self.state.platform_pose = pose;
        self.state.wheel_speeds = wheels;
        self.state.arm_joints = joints;
        self.state.step_index += 1;
        self.state.time = self.state.step_index as f64 * self.config.dt;
        Ok(&self.state)
    }

    fn tool_tip_for(&self, pose: &Pose2D, joints: &[f64]) -> Point3<f64> {
        let tcp = pose.to_isometry() * self.arm_mount * self.chain.fk_unchecked(joints);
        Point3::from(tcp.translation.vector)
    }

    /// TCP pose in the world frame from the true joints.
    pub fn tool_pose_world(&self) -> Pose3 {
        self.state.platform_pose.to_isometry() * self.arm_mount * self.chain.fk_unchecked(&self.state.arm_joints)
    }

    pub fn tool_tip_world(&self) -> Point3<f64> {
        Point3::from(self.tool_pose_world().translation.vector)
    }

    /// Camera optical frame in the world.
    pub fn camera_pose_world(&self) -> Pose3 {
        self.tool_pose_world() * self.camera_mount
    }

    /// Reported tool-frame wrench at `tool_tip`: the spring reaction along
    /// tool z plus sensor noise.
    pub fn contact_force(&mut self, tool_tip: &Point3<f64>) -> Result<Wrench, SimError> {
        if !tool_tip.coords.iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidCommand("non-finite tool tip".into()));
        }
        let fz = self.config.ground.contact_force(tool_tip)?;
        let n = &self.config.noise;
        let rng = &mut self.streams.force;
        Ok(Wrench {
            fx: gaussian(rng, n.force_sigma),
            fy: gaussian(rng, n.force_sigma),
            fz: fz + gaussian(rng, n.force_sigma),
            tx: gaussian(rng, n.torque_sigma),
            ty: gaussian(rng, n.torque_sigma),
            tz: gaussian(rng, n.torque_sigma),
        })
    }

    pub fn true_contact_force(&self) -> f64 {
        self.config.ground.contact_force(&self.tool_tip_world()).unwrap_or(f64::NAN)
    }

    /// Raw strain-gauge signals for the current tool contact.
    pub fn force_signals(&mut self) -> Result<[f64; 6], SimError> {
        let tip = self.tool_tip_world();
        let wrench = self.contact_force(&tip)?;
        Ok(self.calibration.encode(&wrench))
    }

    pub fn sample_gnss(&mut self) -> GnssFix {
        let n = &self.config.noise;
        let rng = &mut self.streams.gnss;
        let mut x = self.state.platform_pose.x + gaussian(rng, n.gnss_sigma);
        let mut y = self.state.platform_pose.y + gaussian(rng, n.gnss_sigma);
        if n.gnss_outlier_prob > 0.0 && rand::Rng::random::<f64>(rng) < n.gnss_outlier_prob {
            let angle = rand::Rng::random::<f64>(rng) * 2.0 * std::f64::consts::PI;
            x += n.gnss_outlier_magnitude * angle.cos();
            y += n.gnss_outlier_magnitude * angle.sin();
        }
        GnssFix { x, y, sigma: n.gnss_sigma }
    }

    pub fn sample_imu(&mut self) -> ImuReading {
        let n = &self.config.noise;
        let (_, omega) = self.state.wheel_speeds.body_velocity(self.config.platform.wheelbase);
        let rng = &mut self.streams.imu;
        ImuReading {
            yaw_rate: omega + gaussian(rng, n.gyro_sigma),
            compass_heading: wrap_angle(self.state.platform_pose.yaw + gaussian(rng, n.compass_sigma)),
        }
    }

    /// Wheel encoder speeds over the last step.
    pub fn sample_odometry(&mut self) -> WheelSpeeds {
        let sigma = self.config.noise.odom_sigma;
        let w = self.state.wheel_speeds;
        let rng = &mut self.streams.odom;
        WheelSpeeds::new(w.left + gaussian(rng, sigma), w.right + gaussian(rng, sigma))
    }

    /// Renders what the arm-mounted camera currently sees.
    pub fn render_camera(&mut self) -> Result<(ColorImage, DepthImage), SimError> {
        let pose = self.camera_pose_world();
        self.render(&pose)
    }

    pub fn render(&mut self, camera_pose: &Pose3) -> Result<(ColorImage, DepthImage), SimError> {
        self.streams.render_count += 1;
        let mut options = self.config.scene.clone();
        options.seed = self.config.seed ^ self.streams.render_count.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        options.depth_sigma = self.config.noise.depth_sigma;
        let visible: Vec<Weed> = self.state.weeds.iter().filter(|w| !w.removed).cloned().collect();
        render_scene(&visible, &self.config.ground, camera_pose, &self.config.camera, &options)
    }

    pub fn weed(&self, id: u32) -> Option<&Weed> {
        self.state.weeds.iter().find(|w| w.id == id)
    }

    /// Nearest weed whose root lies within `radius` (horizontal) of `point`.
    pub fn weed_near(&self, point: &Point3<f64>, radius: f64) -> Option<&Weed> {
        self.state
            .weeds
            .iter()
            .map(|w| (w, (w.root_position[0] - point.x).hypot(w.root_position[1] - point.y)))
            .filter(|(_, d)| *d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(w, _)| w)
    }

    pub fn remove_weed(&mut self, id: u32) -> bool {
        match self.state.weeds.iter_mut().find(|w| w.id == id) {
            Some(w) if !w.removed => {
                w.removed = true;
                self.state.removed_ids.insert(id);
                true
            }
            _ => false,
        }
    }

    /// Platform-frame position of a world point under the true pose.
    pub fn to_platform_frame(&self, world_point: &Point3<f64>) -> Point3<f64> {
        self.state.platform_pose.to_isometry().inverse_transform_point(world_point)
    }

    pub fn platform_velocity(&self) -> (f64, f64) {
        self.state.wheel_speeds.body_velocity(self.config.platform.wheelbase)
    }

    pub fn tool_axis_world(&self) -> Vector3<f64> {
        self.tool_pose_world().rotation * Vector3::z()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_world() -> World {
        World::new(WorldConfig { noise: SensorNoise::zero(), ..WorldConfig::default() }).unwrap()
    }

    #[test]
    fn straight_line_one_second() {
        let mut w = quiet_world();
        let q = w.state().arm_joints.clone();
        for _ in 0..100 {
            w.step(WheelSpeeds::new(1.0, 1.0), &q, 0.01).unwrap();
        }
        let p = w.state().platform_pose;
        assert!((p.x - 1.0).abs() < 1e-12);
        assert_eq!(p.yaw, 0.0);
        assert!((w.time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn turn_in_place() {
        let mut w = quiet_world();
        let q = w.state().arm_joints.clone();
        w.step(WheelSpeeds::new(-0.3, 0.3), &q, 0.01).unwrap();
        let p = w.state().platform_pose;
        assert!(p.x.abs() < 1e-15 && p.y.abs() < 1e-15);
        assert!((p.yaw - 0.6 / 0.6 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_commands() {
        let mut w = quiet_world();
        let q = w.state().arm_joints.clone();
        assert!(matches!(w.step(WheelSpeeds::new(f64::NAN, 0.0), &q, 0.01), Err(SimError::InvalidCommand(_))));
        assert!(matches!(w.step(WheelSpeeds::ZERO, &q, 0.0), Err(SimError::BadTimeStep { .. })));
        assert!(matches!(w.step(WheelSpeeds::ZERO, &q, -0.01), Err(SimError::BadTimeStep { .. })));
        let mut bad = q.clone();
        bad[0] = f64::INFINITY;
        assert!(matches!(w.step(WheelSpeeds::ZERO, &bad, 0.01), Err(SimError::InvalidCommand(_))));
    }

    #[test]
    fn arm_joint_rate_limited() {
        let mut w = quiet_world();
        let mut target = w.state().arm_joints.clone();
        let start = target[0];
        target[0] = start + 1.0;
        w.step(WheelSpeeds::ZERO, &target, 0.01).unwrap();
        let moved = w.state().arm_joints[0] - start;
        assert!((moved - 72.0_f64.to_radians() * 0.01).abs() < 1e-12);
    }

    #[test]
    fn spring_contact_law() {
        let ground = GroundModel::default();
        assert_eq!(ground.contact_force(&Point3::new(0.0, 0.0, 0.01)).unwrap(), 0.0);
        assert!((ground.contact_force(&Point3::new(0.0, 0.0, -0.005)).unwrap() - 50.0).abs() < 1e-9);
        assert!(matches!(ground.contact_force(&Point3::new(0.0, 0.0, -0.07)), Err(SimError::ToolJam { .. })));
    }

    #[test]
    fn zero_noise_sensors_are_exact() {
        let mut w = World::new(WorldConfig {
            noise: SensorNoise::zero(),
            start_pose: Pose2D::new(1.0, 2.0, 0.4),
            ..WorldConfig::default()
        })
        .unwrap();
        let fix = w.sample_gnss();
        assert_eq!((fix.x, fix.y), (1.0, 2.0));
        let imu = w.sample_imu();
        assert_eq!(imu.yaw_rate, 0.0);
        assert_eq!(imu.compass_heading, 0.4);
    }

    #[test]
    fn turning_imu_reports_rate() {
        let mut w = quiet_world();
        let q = w.state().arm_joints.clone();
        // ω = (vr - vl)/B = 0.3/0.6
        w.step(WheelSpeeds::new(-0.15, 0.15), &q, 0.01).unwrap();
        assert!((w.sample_imu().yaw_rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compass_wraps_near_pi() {
        let mut w = World::new(WorldConfig { start_pose: Pose2D::new(0.0, 0.0, 3.13), ..WorldConfig::default() }).unwrap();
        for _ in 0..2000 {
            let h = w.sample_imu().compass_heading;
            assert!(h > -std::f64::consts::PI && h <= std::f64::consts::PI);
        }
    }

    #[test]
    fn invalid_weed_rejected() {
        let mut cfg = WorldConfig::default();
        cfg.weeds.push(Weed::rosette(1, [0.0, 0.0, 0.0], 3, 0.05, 0.06, 0.0, 50.0));
        assert!(matches!(World::new(cfg), Err(SimError::Config(_))));
        let mut cfg = WorldConfig::default();
        cfg.weeds.push(Weed::rosette(1, [0.0, 0.0, 0.0], 3, 0.06, 0.02, 0.0, 250.0));
        assert!(matches!(World::new(cfg), Err(SimError::Config(_))));
    }
}
