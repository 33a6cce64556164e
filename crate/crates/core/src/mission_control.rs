//! Mission executive: weed map loading, the per-weed task triple, event
//! dispatch with the skip-on-failure policy, and the control-mode machine.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("weed map parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("weed map entry {index} (id {id}): {message}")]
    Field { index: usize, id: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot switch from {from:?} to {to:?}: {reason}")]
pub struct ModeError {
    pub from: ControlMode,
    pub to: ControlMode,
    pub reason: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Mission,
    Joystick,
    CoordinateDrive,
    Idle,
    Estop,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] = [ControlMode::Mission, ControlMode::Joystick, ControlMode::CoordinateDrive, ControlMode::Idle, ControlMode::Estop];

    pub fn allows_motion(&self) -> bool {
        matches!(self, ControlMode::Mission | ControlMode::Joystick | ControlMode::CoordinateDrive)
    }
}

/// Mode transition rule: estop from anywhere, everything else through idle,
/// and idle is left only while nothing moves.
pub fn set_mode(current: ControlMode, requested: ControlMode, arm_moving: bool, platform_moving: bool) -> Result<ControlMode, ModeError> {
    use ControlMode::*;
    let reject = |reason| Err(ModeError { from: current, to: requested, reason });
    if requested == Estop {
        return Ok(Estop);
    }
    if requested == current {
        return Ok(current);
    }
    match (current, requested) {
        (Estop, Idle) if arm_moving || platform_moving => reject("robot still moving"),
        (Estop, Idle) => Ok(Idle),
        (Estop, _) => reject("estop must be reset to idle first"),
        (_, Idle) => Ok(Idle),
        (Idle, _) if arm_moving || platform_moving => reject("robot still moving"),
        (Idle, _) => Ok(requested),
        _ => reject("transitions go through idle"),
    }
}

/// Origin of the local ENU frame for geodetic weed maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_000.0;

impl GeoOrigin {
    /// Equirectangular projection to local east/north meters.
    pub fn to_local(&self, lat: f64, lon: f64) -> Point2 {
        let east = EARTH_RADIUS_M * (lon - self.lon).to_radians() * self.lat.to_radians().cos();
        let north = EARTH_RADIUS_M * (lat - self.lat).to_radians();
        Point2::new(east, north)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeedEntry {
    pub id: u32,
    pub position: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TransferPlatform,
    AcquireImage,
    WeedingAction,
}

impl TaskKind {
    pub fn letter(&self) -> char {
        match self {
            TaskKind::TransferPlatform => 'T',
            TaskKind::AcquireImage => 'I',
            TaskKind::WeedingAction => 'W',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
    Skipped,
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Failed | TaskStatus::Skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub weed_id: u32,
    pub status: TaskStatus,
    /// Target location from the weed map (world ENU).
    pub waypoint: Point2,
    /// Root from the preceding image acquisition (platform frame).
    pub root_platform: Option<[f64; 3]>,
    pub attempts: u32,
}

/// One task status change, as written to the mission log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTransition {
    pub task: usize,
    pub weed_id: u32,
    pub kind: TaskKind,
    pub from: TaskStatus,
    pub to: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub source: String,
    pub weeds: Vec<WeedEntry>,
    pub tasks: Vec<Task>,
    /// Image acquisitions allowed per weed before its weeding is skipped.
    pub acquire_attempts: u32,
    /// Transitions not yet drained by the caller.
    #[serde(skip)]
    pub pending_log: Vec<TaskTransition>,
}

impl Mission {
    pub fn from_weeds(source: impl Into<String>, weeds: Vec<WeedEntry>) -> Self {
        let tasks = weeds
            .iter()
            .flat_map(|w| {
                [TaskKind::TransferPlatform, TaskKind::AcquireImage, TaskKind::WeedingAction].map(|kind| Task {
                    kind,
                    weed_id: w.id,
                    status: TaskStatus::Pending,
                    waypoint: w.position,
                    root_platform: None,
                    attempts: 0,
                })
            })
            .collect();
        Self { source: source.into(), weeds, tasks, acquire_attempts: 2, pending_log: Vec::new() }
    }

    pub fn is_complete(&self) -> bool {
        self.tasks.iter().all(|t| t.status.is_terminal())
    }

    pub fn running(&self) -> Option<usize> {
        self.tasks.iter().position(|t| t.status == TaskStatus::Running)
    }

    pub fn count(&self, status: TaskStatus) -> usize {
        self.tasks.iter().filter(|t| t.status == status).count()
    }

    pub fn drain_log(&mut self) -> Vec<TaskTransition> {
        std::mem::take(&mut self.pending_log)
    }

    fn set_status(&mut self, index: usize, to: TaskStatus, detail: Option<String>) {
        let task = &mut self.tasks[index];
        let from = task.status;
        task.status = to;
        self.pending_log.push(TaskTransition { task: index, weed_id: task.weed_id, kind: task.kind, from, to, detail });
    }

    /// Puts a running task back to pending, e.g. after a pause.
    pub fn interrupt(&mut self) {
        if let Some(i) = self.running() {
            self.tasks[i].attempts = self.tasks[i].attempts.saturating_sub(1);
            self.set_status(i, TaskStatus::Pending, Some("interrupted".into()));
        }
    }

    fn start_next(&mut self) -> Command {
        let Some(index) = self.tasks.iter().position(|t| t.status == TaskStatus::Pending) else {
            return Command::Stop;
        };
        if self.tasks[index].kind == TaskKind::WeedingAction && self.tasks[index].root_platform.is_none() {
            // Unreachable through dispatch; guards hand-edited missions.
            self.set_status(index, TaskStatus::Skipped, Some("no root position".into()));
            return self.start_next();
        }
        self.set_status(index, TaskStatus::Running, None);
        let task = &mut self.tasks[index];
        task.attempts += 1;
        command_for(index, task)
    }

    fn skip_rest_of_weed(&mut self, index: usize, reason: &str) {
        let weed = self.tasks[index].weed_id;
        for j in index + 1..self.tasks.len() {
            if self.tasks[j].weed_id == weed && self.tasks[j].status == TaskStatus::Pending {
                self.set_status(j, TaskStatus::Skipped, Some(reason.to_string()));
            }
        }
    }
}

fn command_for(index: usize, task: &Task) -> Command {
    match task.kind {
        TaskKind::TransferPlatform => Command::NavigateTo { task: index, weed_id: task.weed_id, target: task.waypoint },
        TaskKind::AcquireImage => Command::Capture { task: index, weed_id: task.weed_id, expected: task.waypoint },
        TaskKind::WeedingAction => Command::WeedAt {
            task: index,
            weed_id: task.weed_id,
            root_platform: task.root_platform.expect("checked by start_next"),
        },
    }
}

/// Concrete order for the executing module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Drive so the tool's work point lands on `target` (world ENU).
    NavigateTo { task: usize, weed_id: u32, target: Point2 },
    /// Photograph the ground around `expected` (world ENU) from the nadir camera pose.
    Capture { task: usize, weed_id: u32, expected: Point2 },
    WeedAt { task: usize, weed_id: u32, root_platform: [f64; 3] },
    /// Mission complete or nothing to do: platform stops.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TaskEvent {
    Start,
    Done { task: usize, root_platform: Option<[f64; 3]> },
    Failed { task: usize, reason: String },
}

/// Advances the mission on `event` and returns the next command.
pub fn dispatch(mission: &Mission, event: &TaskEvent) -> Result<(Mission, Command), MissionError> {
    let mut m = mission.clone();
    let check_running = |m: &Mission, task: usize| -> Result<(), MissionError> {
        match m.tasks.get(task) {
            Some(t) if t.status == TaskStatus::Running => Ok(()),
            Some(t) => Err(MissionError::Protocol(format!("task {task} is {:?}, not running", t.status))),
            None => Err(MissionError::Protocol(format!("task {task} does not exist"))),
        }
    };
    let command = match event {
        TaskEvent::Start => {
            if let Some(i) = m.running() {
                return Err(MissionError::Protocol(format!("task {i} is already running")));
            }
            m.start_next()
        }
        TaskEvent::Done { task, root_platform } => {
            check_running(&m, *task)?;
            let kind = m.tasks[*task].kind;
            if kind == TaskKind::AcquireImage {
                let Some(root) = root_platform.filter(|r| r.iter().all(|v| v.is_finite())) else {
                    return Err(MissionError::Protocol("acquire_image completed without a root position".into()));
                };
                if let Some(w) = m.tasks.get_mut(*task + 1).filter(|t| t.kind == TaskKind::WeedingAction) {
                    w.root_platform = Some(root);
                }
            }
            m.set_status(*task, TaskStatus::Done, None);
            m.start_next()
        }
        TaskEvent::Failed { task, reason } => {
            check_running(&m, *task)?;
            let t = &m.tasks[*task];
            if t.kind == TaskKind::AcquireImage && t.attempts < m.acquire_attempts {
                let detail = format!("retry after: {reason}");
                m.pending_log.push(TaskTransition {
                    task: *task,
                    weed_id: t.weed_id,
                    kind: t.kind,
                    from: TaskStatus::Running,
                    to: TaskStatus::Running,
                    detail: Some(detail),
                });
                let t = &mut m.tasks[*task];
                t.attempts += 1;
                command_for(*task, t)
            } else {
                m.set_status(*task, TaskStatus::Failed, Some(reason.clone()));
                m.skip_rest_of_weed(*task, "earlier task for this weed failed");
                m.start_next()
            }
        }
    };
    Ok((m, command))
}

fn number_field(entry: &serde_json::Map<String, Value>, key: &str, index: usize, id: &str) -> Result<Option<f64>, MissionError> {
    match entry.get(key) {
        None => Ok(None),
        Some(Value::Number(n)) => {
            let v = n.as_f64().unwrap_or(f64::NAN);
            if v.is_finite() {
                Ok(Some(v))
            } else {
                Err(MissionError::Field { index, id: id.to_string(), message: format!("field '{key}' is not finite") })
            }
        }
        Some(other) => Err(MissionError::Field { index, id: id.to_string(), message: format!("field '{key}' must be a number, got {other}") }),
    }
}

/// Parses a weed map: a JSON array of `{id, x, y}` or `{id, lat, lon}`
/// entries, or an object `{"origin": {lat, lon}, "weeds": [...]}`.
pub fn load_weed_map(text: &str, source: &str, default_origin: Option<GeoOrigin>) -> Result<Mission, MissionError> {
    let root: Value = serde_json::from_str(text).map_err(|e| MissionError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    let (entries, origin) = match &root {
        Value::Array(a) => (a.clone(), default_origin),
        Value::Object(o) => {
            let weeds = match o.get("weeds") {
                Some(Value::Array(a)) => a.clone(),
                _ => return Err(MissionError::Parse { line: 1, column: 1, message: "expected a 'weeds' array".into() }),
            };
            let origin = match o.get("origin") {
                None => default_origin,
                Some(v) => Some(serde_json::from_value::<GeoOrigin>(v.clone()).map_err(|e| MissionError::Parse { line: 1, column: 1, message: format!("origin: {e}") })?),
            };
            (weeds, origin)
        }
        _ => return Err(MissionError::Parse { line: 1, column: 1, message: "expected an array of weeds".into() }),
    };
    let mut weeds = Vec::with_capacity(entries.len());
    for (index, item) in entries.iter().enumerate() {
        let Value::Object(entry) = item else {
            return Err(MissionError::Field { index, id: "?".into(), message: "entry must be an object".into() });
        };
        let id_value = entry.get("id").cloned().unwrap_or(Value::Null);
        let id_text = id_value.to_string();
        let id = id_value
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| MissionError::Field { index, id: id_text.clone(), message: "field 'id' must be a non-negative integer".into() })?;
        if weeds.iter().any(|w: &WeedEntry| w.id == id) {
            return Err(MissionError::Field { index, id: id_text, message: "duplicate id".into() });
        }
        let x = number_field(entry, "x", index, &id_text)?;
        let y = number_field(entry, "y", index, &id_text)?;
        let lat = number_field(entry, "lat", index, &id_text)?;
        let lon = number_field(entry, "lon", index, &id_text)?;
        let position = match (x, y, lat, lon) {
            (Some(x), Some(y), _, _) => Point2::new(x, y),
            (_, _, Some(lat), Some(lon)) => {
                let origin = origin.ok_or_else(|| MissionError::Field { index, id: id_text.clone(), message: "lat/lon given but no origin configured".into() })?;
                origin.to_local(lat, lon)
            }
            _ => return Err(MissionError::Field { index, id: id_text, message: "needs either x and y or lat and lon".into() }),
        };
        weeds.push(WeedEntry { id, position });
    }
    Ok(Mission::from_weeds(source, weeds))
}

/// One JSON-lines mission log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    #[serde(flatten)]
    pub transition: TaskTransition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Value>,
}
