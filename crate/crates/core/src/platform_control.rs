//! Waypoint following for the differential-drive platform.
//!
//! Three stages, each a pure step function: [`path_step`] picks the target
//! heading, [`trajectory_step`] turns it into wheel speeds with a
//! turn-then-drive law, and [`motion_clamp`] shapes the result to the
//! actuator limits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose2D};
use crate::sim_world::WheelSpeeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlatformError {
    #[error("path has no waypoints")]
    EmptyPath,
    #[error("arrival tolerance must be positive")]
    BadTolerance,
    #[error("waypoint {0} is not finite")]
    NonFiniteWaypoint(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point2>,
    /// Radius for advancing past intermediate waypoints, m.
    pub arrival_tolerance: f64,
    /// Radius for the last waypoint, m.
    pub final_tolerance: f64,
    pub current_index: usize,
}

impl Path {
    pub const DEFAULT_TOLERANCE: f64 = 0.25;

    pub fn new(waypoints: Vec<Point2>) -> Result<Self, PlatformError> {
        Self::with_tolerances(waypoints, Self::DEFAULT_TOLERANCE, Self::DEFAULT_TOLERANCE)
    }

    pub fn with_tolerances(waypoints: Vec<Point2>, arrival_tolerance: f64, final_tolerance: f64) -> Result<Self, PlatformError> {
        if waypoints.is_empty() {
            return Err(PlatformError::EmptyPath);
        }
        if let Some(i) = waypoints.iter().position(|w| !w.is_finite()) {
            return Err(PlatformError::NonFiniteWaypoint(i));
        }
        if !(arrival_tolerance > 0.0 && final_tolerance > 0.0) {
            return Err(PlatformError::BadTolerance);
        }
        Ok(Self { waypoints, arrival_tolerance, final_tolerance, current_index: 0 })
    }

    pub fn is_finished(&self) -> bool {
        self.current_index >= self.waypoints.len()
    }

    pub fn goal(&self) -> Option<Point2> {
        self.waypoints.last().copied()
    }

    fn tolerance_for(&self, index: usize) -> f64 {
        if index + 1 == self.waypoints.len() {
            self.final_tolerance
        } else {
            self.arrival_tolerance
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub target_heading: f64,
    pub distance: f64,
    pub finished: bool,
}

/// Advances `path` past every waypoint already within tolerance and returns
/// the heading and distance to the next one.
pub fn path_step(path: &mut Path, pose: &Pose2D) -> Result<PathStep, PlatformError> {
    if path.waypoints.is_empty() {
        return Err(PlatformError::EmptyPath);
    }
    let here = pose.position();
    while path.current_index < path.waypoints.len() {
        let wp = path.waypoints[path.current_index];
        if here.distance(&wp) < path.tolerance_for(path.current_index) {
            path.current_index += 1;
        } else {
            break;
        }
    }
    let index = path.current_index.min(path.waypoints.len() - 1);
    let wp = path.waypoints[index];
    Ok(PathStep {
        target_heading: (wp.y - here.y).atan2(wp.x - here.x),
        distance: here.distance(&wp),
        finished: path.is_finished(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Heading error above which the platform turns in place, rad.
    pub turn_threshold: f64,
    /// 1/s
    pub kv: f64,
    /// 1/s
    pub komega: f64,
    /// m/s
    pub v_max: f64,
    /// m
    pub wheelbase: f64,
    /// m/s
    pub max_wheel_speed: f64,
    /// m/s²
    pub a_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { turn_threshold: 0.5, kv: 0.8, komega: 1.5, v_max: 1.0, wheelbase: 0.6, max_wheel_speed: 1.0, a_max: 1.0 }
    }
}

/// Body velocity to wheel speeds, scaled jointly to respect `limit`.
pub fn body_to_wheels(v: f64, omega: f64, wheelbase: f64, limit: f64) -> WheelSpeeds {
    let left = v - omega * wheelbase / 2.0;
    let right = v + omega * wheelbase / 2.0;
    scale_to_limit(WheelSpeeds::new(left, right), limit)
}

fn scale_to_limit(w: WheelSpeeds, limit: f64) -> WheelSpeeds {
    let peak = w.left.abs().max(w.right.abs());
    if peak > limit {
        let s = limit / peak;
        WheelSpeeds::new(w.left * s, w.right * s)
    } else {
        w
    }
}

pub fn trajectory_step(target_heading: f64, distance: f64, pose: &Pose2D, config: &ControllerConfig) -> WheelSpeeds {
    let e = wrap_angle(target_heading - pose.yaw);
    let omega = config.komega * e;
    let v = if e.abs() > config.turn_threshold { 0.0 } else { config.v_max.min(config.kv * distance.max(0.0)) };
    body_to_wheels(v, omega, config.wheelbase, config.max_wheel_speed)
}

/// Ratio-preserving magnitude clamp followed by a per-wheel acceleration limit.
pub fn motion_clamp(cmd: WheelSpeeds, prev: WheelSpeeds, dt: f64, config: &ControllerConfig) -> WheelSpeeds {
    let target = scale_to_limit(cmd, config.max_wheel_speed);
    let dv = config.a_max * dt;
    let limited = WheelSpeeds::new(
        target.left.clamp(prev.left - dv, prev.left + dv),
        target.right.clamp(prev.right - dv, prev.right + dv),
    );
    scale_to_limit(limited, config.max_wheel_speed)
}

/// Path tracker holding the previous wheel command for rate limiting.
#[derive(Debug, Clone)]
pub struct PlatformController {
    pub config: ControllerConfig,
    path: Option<Path>,
    prev: WheelSpeeds,
}

impl PlatformController {
    pub fn new(config: ControllerConfig) -> Self {
        Self { config, path: None, prev: WheelSpeeds::ZERO }
    }

    pub fn set_path(&mut self, path: Path) {
        self.path = Some(path);
    }

    pub fn clear_path(&mut self) {
        self.path = None;
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_ref()
    }

    pub fn last_command(&self) -> WheelSpeeds {
        self.prev
    }

    /// Forgets the previous command, e.g. after an emergency stop zeroed the wheels.
    pub fn reset(&mut self) {
        self.prev = WheelSpeeds::ZERO;
    }

    /// One control period of path following; commands a stop when the path
    /// is finished or absent.
    pub fn update(&mut self, pose: &Pose2D, dt: f64) -> Result<(WheelSpeeds, bool), PlatformError> {
        let (raw, finished) = match self.path.as_mut() {
            None => (WheelSpeeds::ZERO, true),
            Some(path) => {
                let step = path_step(path, pose)?;
                if step.finished {
                    (WheelSpeeds::ZERO, true)
                } else {
                    (trajectory_step(step.target_heading, step.distance, pose, &self.config), false)
                }
            }
        };
        Ok((self.shape(raw, dt), finished))
    }

    /// Passes an externally requested command through the same limits.
    pub fn shape(&mut self, cmd: WheelSpeeds, dt: f64) -> WheelSpeeds {
        let out = motion_clamp(cmd, self.prev, dt, &self.config);
        self.prev = out;
        out
    }

    /// Body-velocity jog (joystick mode).
    pub fn jog(&mut self, v: f64, omega: f64, dt: f64) -> WheelSpeeds {
        let raw = body_to_wheels(v, omega, self.config.wheelbase, self.config.max_wheel_speed);
        self.shape(raw, dt)
    }
}
