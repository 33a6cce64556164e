//! Wire protocol between the service and operator clients.
//!
//! Each message is one JSON object on its own line. Clients send
//! [`Envelope`]s; the server sends [`ServerMessage`]s (telemetry frames and
//! replies to commands) on the same connection.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use weedbot_core::force_control::Wrench;
use weedbot_core::geometry::{Point2, Pose2D};
use weedbot_core::mission_control::{ControlMode, Mission, TaskKind, TaskStatus};
use weedbot_core::sim_world::WheelSpeeds;

/// Serialized frames must fit in this many bytes.
pub const MAX_FRAME_BYTES: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandMessage {
    SetMode {
        mode: ControlMode,
        /// Destination for coordinate drive, world frame.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Point2>,
    },
    /// Body velocity, m/s and rad/s.
    JogPlatform { v: f64, omega: f64 },
    /// rad/s per joint.
    JogArm { joint_velocities: Vec<f64> },
    /// A weed map in either accepted format.
    LoadMission { weeds: Value },
    Start,
    Pause,
    Estop,
    Reset,
}

impl CommandMessage {
    pub fn name(&self) -> &'static str {
        match self {
            CommandMessage::SetMode { .. } => "set_mode",
            CommandMessage::JogPlatform { .. } => "jog_platform",
            CommandMessage::JogArm { .. } => "jog_arm",
            CommandMessage::LoadMission { .. } => "load_mission",
            CommandMessage::Start => "start",
            CommandMessage::Pause => "pause",
            CommandMessage::Estop => "estop",
            CommandMessage::Reset => "reset",
        }
    }
}

/// A command plus an optional client-chosen id echoed in the reply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub command: CommandMessage,
}

// Flattening would let unknown fields through, so the id is split off by hand.
impl<'de> Deserialize<'de> for Envelope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut map = serde_json::Map::deserialize(d)?;
        let id = match map.remove("id") {
            None | Some(Value::Null) => None,
            Some(v) => Some(u64::deserialize(v).map_err(D::Error::custom)?),
        };
        let fields = map.len();
        let command = CommandMessage::deserialize(Value::Object(map)).map_err(D::Error::custom)?;
        // Unit variants ignore extra fields even when unknown fields are denied.
        if matches!(command, CommandMessage::Start | CommandMessage::Pause | CommandMessage::Estop | CommandMessage::Reset) && fields > 1 {
            return Err(D::Error::custom(format!("`{}` takes no fields", command.name())));
        }
        Ok(Envelope { id, command })
    }
}

/// Bounds a jog must respect to be accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JogLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub joint_velocity_max: f64,
    pub joints: usize,
}

impl JogLimits {
    pub fn check(&self, cmd: &CommandMessage) -> Result<(), String> {
        match cmd {
            CommandMessage::JogPlatform { v, omega } => {
                if !(v.is_finite() && omega.is_finite()) {
                    return Err("jog velocities must be finite".into());
                }
                if v.abs() > self.v_max {
                    return Err(format!("|v| = {} exceeds {} m/s", v.abs(), self.v_max));
                }
                if omega.abs() > self.omega_max {
                    return Err(format!("|omega| = {} exceeds {:.3} rad/s", omega.abs(), self.omega_max));
                }
                Ok(())
            }
            CommandMessage::JogArm { joint_velocities } => {
                if joint_velocities.len() != self.joints {
                    return Err(format!("expected {} joint velocities, got {}", self.joints, joint_velocities.len()));
                }
                if let Some((i, q)) = joint_velocities.iter().enumerate().find(|(_, q)| !(q.is_finite() && q.abs() <= self.joint_velocity_max)) {
                    return Err(format!("joint {i} velocity {q} outside ±{:.3} rad/s", self.joint_velocity_max));
                }
                Ok(())
            }
            CommandMessage::SetMode { target: Some(t), .. } if !t.is_finite() => Err("target must be finite".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveTask {
    pub kind: TaskKind,
    pub weed_id: u32,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissionProgress {
    pub tasks: usize,
    pub pending: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl MissionProgress {
    pub fn of(mission: &Mission) -> Self {
        Self {
            tasks: mission.tasks.len(),
            pending: mission.count(TaskStatus::Pending),
            running: mission.count(TaskStatus::Running),
            done: mission.count(TaskStatus::Done),
            failed: mission.count(TaskStatus::Failed),
            skipped: mission.count(TaskStatus::Skipped),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// Platform frame, m.
    pub root_platform: [f64; 3],
    pub confidence: f64,
    pub leaf_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub seq: u64,
    /// Simulated time, s.
    pub time: f64,
    pub mode: ControlMode,
    pub estimated_pose: Pose2D,
    /// Simulator ground truth.
    pub true_pose: Option<Pose2D>,
    pub active_task: Option<ActiveTask>,
    /// rad
    pub joints: Vec<f64>,
    /// Filtered tool-frame wrench.
    pub wrench: Wrench,
    /// Wheel command sent on the last control step, m/s.
    pub wheel_command: WheelSpeeds,
    /// Joint velocity commanded on the last control step, rad/s.
    pub joint_command: Vec<f64>,
    pub last_detection: Option<DetectionSummary>,
    pub progress: MissionProgress,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: Option<u64>,
    pub command: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    Reply(Reply),
}

/// Parses one client line. On failure the error text is ready to send back.
pub fn parse_command(line: &str) -> Result<Envelope, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed command: {e}"))
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> JogLimits {
        JogLimits { v_max: 1.0, omega_max: 3.0, joint_velocity_max: 1.2, joints: 6 }
    }

    #[test]
    fn commands_use_kind_tag() {
        let e = parse_command(r#"{"id": 4, "kind": "jog_platform", "v": 0.2, "omega": -0.1}"#).unwrap();
        assert_eq!(e.id, Some(4));
        assert_eq!(e.command, CommandMessage::JogPlatform { v: 0.2, omega: -0.1 });
        let e = parse_command(r#"{"kind": "set_mode", "mode": "coordinate_drive", "target": {"x": 1.0, "y": 2.0}}"#).unwrap();
        assert_eq!(e.command, CommandMessage::SetMode { mode: ControlMode::CoordinateDrive, target: Some(Point2::new(1.0, 2.0)) });
        assert_eq!(parse_command(r#"{"kind": "estop"}"#).unwrap().command, CommandMessage::Estop);
    }

    #[test]
    fn malformed_commands_rejected() {
        for bad in [r#"{"kind": "fly"}"#, r#"{"kind": "jog_platform", "v": 1}"#, "not json", r#"{"kind": "start", "extra": 1}"#] {
            assert!(parse_command(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn jog_limits() {
        let l = limits();
        assert!(l.check(&CommandMessage::JogPlatform { v: 0.5, omega: 1.0 }).is_ok());
        assert!(l.check(&CommandMessage::JogPlatform { v: 1.5, omega: 0.0 }).is_err());
        assert!(l.check(&CommandMessage::JogPlatform { v: f64::NAN, omega: 0.0 }).is_err());
        assert!(l.check(&CommandMessage::JogArm { joint_velocities: vec![0.0; 5] }).is_err());
        assert!(l.check(&CommandMessage::JogArm { joint_velocities: vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0] }).is_err());
        assert!(l.check(&CommandMessage::JogArm { joint_velocities: vec![0.5; 6] }).is_ok());
    }
}
