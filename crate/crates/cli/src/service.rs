//! Live telemetry and command service.
//!
//! The control loop owns the robot and runs on its own thread. Network
//! threads never touch it: readers validate commands and append them to a
//! queue (estop also raises an atomic flag), and each client has a writer
//! thread fed through a bounded channel. A [`Supervisor`] installed on the
//! robot drains the queue and publishes telemetry once per control period,
//! so commands take effect even in the middle of a mission task.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use weedbot_core::geometry::Point2;
use weedbot_core::mission_control::{load_weed_map, set_mode, ControlMode, GeoOrigin, Mission};
use weedbot_core::platform_control::Path;
use weedbot_core::robot::{Robot, RobotError, Supervisor, SupervisorAction};
use weedbot_core::runner::{MissionExecutor, Progress, TaskSettings};
use weedbot_core::scenario::{ConfigError, Scenario};
use weedbot_core::sim_world::WheelSpeeds;

use crate::protocol::{
    encode, parse_command, ActiveTask, CommandMessage, DetectionSummary, Envelope, JogLimits, MissionProgress, Reply, ServerMessage,
    TelemetryFrame,
};

/// Jog commands lapse after this much simulated time unless repeated.
pub const JOG_TIMEOUT: f64 = 0.5;
const CLIENT_BUFFER: usize = 256;
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: String,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub time_scale: f64,
    /// Control periods between telemetry frames.
    pub telemetry_every: u64,
    /// Mission loaded at startup.
    pub mission: Option<Mission>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { addr: "127.0.0.1:7878".into(), time_scale: 1.0, telemetry_every: 10, mission: None }
    }
}

struct Queued {
    client: u64,
    envelope: Envelope,
}

struct Client {
    id: u64,
    tx: SyncSender<Arc<str>>,
}

/// State shared between network threads and the control loop.
struct Shared {
    estop: AtomicBool,
    shutdown: AtomicBool,
    queue: Mutex<VecDeque<Queued>>,
    clients: Mutex<Vec<Client>>,
    next_client: AtomicU64,
    limits: JogLimits,
    ticks: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn send_to(&self, client: u64, line: Arc<str>) {
        let clients = lock(&self.clients);
        if let Some(c) = clients.iter().find(|c| c.id == client) {
            let _ = c.tx.try_send(line);
        }
    }

    fn reply(&self, client: u64, id: Option<u64>, command: &str, result: Result<(), String>) {
        let reply = Reply { id, command: command.into(), ok: result.is_ok(), error: result.err() };
        self.send_to(client, encode(&ServerMessage::Reply(reply)).into());
    }

    fn broadcast(&self, line: Arc<str>) {
        lock(&self.clients).retain(|c| !matches!(c.tx.try_send(line.clone()), Err(TrySendError::Disconnected(_))));
    }
}

/// What the control loop should be doing, owned jointly with the supervisor.
struct Control {
    mode: ControlMode,
    jog: Option<(f64, f64, f64)>,
    arm_jog: Option<(Vec<f64>, f64)>,
    drive_target: Option<Point2>,
    new_drive: bool,
    new_mission: Option<Mission>,
    /// A mission is loaded and unfinished.
    mission_open: bool,
    progress: MissionProgress,
    active: Option<ActiveTask>,
    removed: usize,
    detection: Option<DetectionSummary>,
    reset_controller: bool,
    prev_joints: Vec<f64>,
    joint_command: Vec<f64>,
    arm_moving: bool,
    seq: u64,
    tick: u64,
    last_error: Option<String>,
}

struct ServiceSupervisor {
    shared: Arc<Shared>,
    control: Arc<Mutex<Control>>,
    origin: Option<GeoOrigin>,
    start: Instant,
    period: Option<Duration>,
    telemetry_every: u64,
}

impl ServiceSupervisor {
    fn handle(&self, c: &mut Control, robot: &Robot, cmd: &CommandMessage) -> Result<(), String> {
        let moving = robot.is_platform_moving();
        let switch = |c: &mut Control, to: ControlMode| -> Result<(), String> {
            let next = set_mode(c.mode, to, c.arm_moving, moving).map_err(|e| e.to_string())?;
            if next != c.mode {
                c.mode = next;
                c.jog = None;
                c.arm_jog = None;
                c.reset_controller = true;
            }
            Ok(())
        };
        match cmd {
            CommandMessage::Estop => switch(c, ControlMode::Estop),
            CommandMessage::Reset => {
                if c.mode != ControlMode::Estop {
                    return Err("reset only applies in estop".into());
                }
                switch(c, ControlMode::Idle)
            }
            CommandMessage::SetMode { mode, target } => {
                if *mode == ControlMode::Mission && !c.mission_open {
                    return Err("no mission loaded".into());
                }
                if *mode == ControlMode::CoordinateDrive {
                    let Some(t) = target else {
                        return Err("coordinate_drive needs a target".into());
                    };
                    switch(c, *mode)?;
                    c.drive_target = Some(*t);
                    c.new_drive = true;
                    return Ok(());
                }
                switch(c, *mode)
            }
            CommandMessage::Start => {
                if !c.mission_open {
                    return Err("no mission loaded".into());
                }
                switch(c, ControlMode::Mission)
            }
            CommandMessage::Pause => {
                if c.mode != ControlMode::Mission {
                    return Err("no mission is running".into());
                }
                switch(c, ControlMode::Idle)
            }
            CommandMessage::LoadMission { weeds } => {
                if c.mode != ControlMode::Idle {
                    return Err("missions can only be loaded in idle".into());
                }
                let mission = load_weed_map(&weeds.to_string(), "console", self.origin).map_err(|e| e.to_string())?;
                c.progress = MissionProgress::of(&mission);
                c.active = None;
                c.removed = 0;
                c.mission_open = !mission.is_complete();
                c.new_mission = Some(mission);
                Ok(())
            }
            CommandMessage::JogPlatform { v, omega } => {
                if c.mode != ControlMode::Joystick {
                    return Err("jogging requires joystick mode".into());
                }
                c.jog = Some((*v, *omega, robot.time() + JOG_TIMEOUT));
                Ok(())
            }
            CommandMessage::JogArm { joint_velocities } => {
                if c.mode != ControlMode::Joystick {
                    return Err("jogging requires joystick mode".into());
                }
                c.arm_jog = Some((joint_velocities.clone(), robot.time() + JOG_TIMEOUT));
                Ok(())
            }
        }
    }

    fn frame(&self, c: &Control, robot: &Robot) -> TelemetryFrame {
        let stopped = c.mode == ControlMode::Estop;
        TelemetryFrame {
            seq: c.seq,
            time: robot.time(),
            mode: c.mode,
            estimated_pose: robot.estimated_pose(),
            true_pose: Some(robot.world.state().platform_pose),
            active_task: c.active,
            joints: robot.joints().to_vec(),
            wrench: robot.filtered_wrench(),
            wheel_command: if stopped { WheelSpeeds::ZERO } else { robot.world.state().wheel_speeds },
            joint_command: if stopped { vec![0.0; c.joint_command.len()] } else { c.joint_command.clone() },
            last_detection: c.detection,
            progress: c.progress,
            removed: c.removed,
        }
    }
}

impl Supervisor for ServiceSupervisor {
    fn on_tick(&mut self, robot: &Robot) -> SupervisorAction {
        let mut c = lock(&self.control);
        if let Some(period) = self.period {
            let due = self.start + period * c.tick as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                drop(c);
                std::thread::sleep(wait);
                c = lock(&self.control);
            }
        }
        c.tick += 1;
        self.shared.ticks.store(c.tick, Ordering::Relaxed);
        let dt = robot.dt();
        let q = robot.joints();
        c.joint_command = q.iter().zip(&c.prev_joints).map(|(a, b)| (a - b) / dt).collect();
        c.arm_moving = c.joint_command.iter().any(|v| v.abs() > 1e-9);
        c.prev_joints = q.to_vec();

        let before = c.mode;
        if self.shared.estop.swap(false, Ordering::SeqCst) {
            let _ = self.handle(&mut c, robot, &CommandMessage::Estop);
        }
        let pending: Vec<Queued> = lock(&self.shared.queue).drain(..).collect();
        for item in pending {
            let result = self.handle(&mut c, robot, &item.envelope.command);
            self.shared.reply(item.client, item.envelope.id, item.envelope.command.name(), result);
        }

        if c.tick % self.telemetry_every == 0 {
            c.seq += 1;
            let line: Arc<str> = encode(&ServerMessage::Telemetry(self.frame(&c, robot))).into();
            self.shared.broadcast(line);
        }
        if c.mode != before {
            // The command for this step was computed for the old mode.
            SupervisorAction::Abort(format!("mode changed to {:?}", c.mode))
        } else {
            SupervisorAction::Continue
        }
    }
}

/// Handle to a running service.
pub struct Service {
    addr: SocketAddr,
    shared: Arc<Shared>,
    control: Option<JoinHandle<Robot>>,
    acceptor: Option<JoinHandle<()>>,
}

impl Service {
    pub fn start(scenario: &Scenario, options: ServeOptions) -> Result<Self, ServeError> {
        let mut robot = scenario.build_robot()?;
        robot.record_trace = false;
        let listener = options.addr.to_socket_addrs().map_err(ServeError::Io)?.next().ok_or_else(|| ServeError::Bind(options.addr.clone()))?;
        let listener = TcpListener::bind(listener).map_err(ServeError::Io)?;
        listener.set_nonblocking(true).map_err(ServeError::Io)?;
        let addr = listener.local_addr().map_err(ServeError::Io)?;

        let chain = robot.world.chain();
        let cc = &robot.platform.config;
        let limits = JogLimits {
            v_max: cc.v_max.min(cc.max_wheel_speed),
            omega_max: 2.0 * cc.max_wheel_speed / cc.wheelbase,
            joint_velocity_max: chain.vel_limit,
            joints: chain.dof(),
        };
        let shared = Arc::new(Shared {
            estop: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            queue: Mutex::new(VecDeque::new()),
            clients: Mutex::new(Vec::new()),
            next_client: AtomicU64::new(1),
            limits,
            ticks: AtomicU64::new(0),
        });
        let control = Arc::new(Mutex::new(Control {
            mode: ControlMode::Idle,
            jog: None,
            arm_jog: None,
            drive_target: None,
            new_drive: false,
            mission_open: options.mission.as_ref().is_some_and(|m| !m.is_complete()),
            progress: options.mission.as_ref().map(MissionProgress::of).unwrap_or_default(),
            new_mission: options.mission.clone(),
            active: None,
            removed: 0,
            detection: None,
            reset_controller: false,
            prev_joints: robot.joints().to_vec(),
            joint_command: vec![0.0; robot.joints().len()],
            arm_moving: false,
            seq: 0,
            tick: 0,
            last_error: None,
        }));
        let period = (options.time_scale > 0.0 && options.time_scale.is_finite()).then(|| Duration::from_secs_f64(robot.dt() / options.time_scale));
        robot.set_supervisor(Some(Box::new(ServiceSupervisor {
            shared: shared.clone(),
            control: control.clone(),
            origin: scenario.origin,
            start: Instant::now(),
            period,
            telemetry_every: options.telemetry_every.max(1),
        })));

        let settings = scenario.tasks.clone();
        let control_shared = shared.clone();
        let control_thread = std::thread::Builder::new()
            .name("control".into())
            .spawn(move || control_loop(robot, settings, control, control_shared))
            .map_err(ServeError::Io)?;
        let accept_shared = shared.clone();
        let acceptor = std::thread::Builder::new().name("accept".into()).spawn(move || accept_loop(listener, accept_shared)).map_err(ServeError::Io)?;
        Ok(Self { addr, shared, control: Some(control_thread), acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Control periods executed so far.
    pub fn ticks(&self) -> u64 {
        self.shared.ticks.load(Ordering::Relaxed)
    }

    pub fn clients(&self) -> usize {
        lock(&self.shared.clients).len()
    }

    /// Stops all threads and hands back the robot.
    pub fn stop(mut self) -> Option<Robot> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Option<Robot> {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let robot = self.control.take().and_then(|c| c.join().ok());
        lock(&self.shared.clients).clear();
        robot
    }

    /// Blocks until the control loop exits.
    pub fn wait(mut self) {
        if let Some(c) = self.control.take() {
            let _ = c.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot resolve address {0}")]
    Bind(String),
    #[error(transparent)]
    Io(std::io::Error),
}

fn control_loop(mut robot: Robot, settings: TaskSettings, control: Arc<Mutex<Control>>, shared: Arc<Shared>) -> Robot {
    let mut exec: Option<MissionExecutor> = None;
    let dt = robot.dt();
    while !shared.shutdown.load(Ordering::SeqCst) {
        let (mode, wheels, arm) = {
            let mut c = lock(&control);
            if let Some(m) = c.new_mission.take() {
                exec = Some(MissionExecutor::new(m));
            }
            if std::mem::take(&mut c.reset_controller) {
                robot.platform.reset();
                robot.platform.clear_path();
            }
            if std::mem::take(&mut c.new_drive) {
                if let Some(t) = c.drive_target {
                    match Path::with_tolerances(vec![t], settings.runner.arrival_tolerance, settings.runner.final_tolerance) {
                        Ok(p) => robot.platform.set_path(p),
                        Err(e) => c.last_error = Some(e.to_string()),
                    }
                }
            }
            let now = robot.time();
            let q = robot.joints().to_vec();
            let (wheels, arm) = match c.mode {
                ControlMode::Estop => (Some(WheelSpeeds::ZERO), q),
                ControlMode::Joystick => {
                    let (v, w) = c.jog.filter(|j| j.2 > now).map_or((0.0, 0.0), |j| (j.0, j.1));
                    let arm = match c.arm_jog.as_ref().filter(|j| j.1 > now) {
                        Some((qd, _)) => {
                            let mut next: Vec<f64> = q.iter().zip(qd).map(|(a, v)| a + v * dt).collect();
                            robot.world.chain().clamp_to_limits(&mut next);
                            next
                        }
                        None => q,
                    };
                    (Some(robot.platform.jog(v, w, dt)), arm)
                }
                ControlMode::CoordinateDrive => (None, q),
                ControlMode::Idle => (Some(robot.platform.shape(WheelSpeeds::ZERO, dt)), q),
                ControlMode::Mission => (Some(WheelSpeeds::ZERO), q),
            };
            (c.mode, wheels, arm)
        };

        match mode {
            ControlMode::Mission => {
                let Some(ex) = exec.as_mut() else {
                    lock(&control).mode = ControlMode::Idle;
                    continue;
                };
                let began = ex.begin(robot.time());
                sync_mission(&control, ex);
                let result = began.and_then(|_| ex.step(&mut robot, &settings));
                let mut c = lock(&control);
                match result {
                    Ok(Progress::Complete) => {
                        c.mission_open = false;
                        if c.mode == ControlMode::Mission {
                            c.mode = ControlMode::Idle;
                        }
                    }
                    Ok(Progress::Continue) | Ok(Progress::Interrupted(_)) => {}
                    Err(e) => {
                        c.last_error = Some(e.to_string());
                        c.mission_open = false;
                        if c.mode == ControlMode::Mission {
                            c.mode = ControlMode::Idle;
                        }
                    }
                }
                drop(c);
                sync_mission(&control, ex);
            }
            ControlMode::CoordinateDrive => {
                let est = robot.estimated_pose();
                let w = robot.platform.update(&est, dt).map(|(w, _)| w).unwrap_or(WheelSpeeds::ZERO);
                step(&mut robot, w, &arm);
            }
            _ => step(&mut robot, wheels.unwrap_or(WheelSpeeds::ZERO), &arm),
        }
    }
    robot.set_supervisor(None);
    robot
}

fn step(robot: &mut Robot, wheels: WheelSpeeds, arm: &[f64]) {
    match robot.tick(wheels, arm) {
        Ok(_) | Err(RobotError::Aborted(_)) => {}
        // A jog into the ground is refused by the simulator; hold still instead.
        Err(RobotError::Sim(_)) => {
            let q = robot.joints().to_vec();
            let _ = robot.tick(WheelSpeeds::ZERO, &q);
        }
    }
}

fn sync_mission(control: &Mutex<Control>, ex: &MissionExecutor) {
    let mut c = lock(control);
    c.progress = MissionProgress::of(&ex.mission);
    c.active = ex.mission.running().map(|i| {
        let t = &ex.mission.tasks[i];
        ActiveTask { kind: t.kind, weed_id: t.weed_id, status: t.status }
    });
    c.removed = ex.metrics.removed;
    c.detection = ex.last_detection.as_ref().map(|h| DetectionSummary { root_platform: h.root_platform, confidence: h.confidence, leaf_count: h.leaf_count });
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Err(e) = attach(stream, &shared) {
                    eprintln!("client setup failed: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                eprintln!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
}

fn attach(stream: TcpStream, shared: &Arc<Shared>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let id = shared.next_client.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = mpsc::sync_channel::<Arc<str>>(CLIENT_BUFFER);
    let writer = stream.try_clone()?;
    lock(&shared.clients).push(Client { id, tx });
    std::thread::Builder::new().name(format!("client-{id}-tx")).spawn(move || write_loop(writer, rx))?;
    let s = shared.clone();
    std::thread::Builder::new().name(format!("client-{id}-rx")).spawn(move || read_loop(stream, id, s))?;
    Ok(())
}

fn write_loop(mut stream: TcpStream, rx: Receiver<Arc<str>>) {
    while let Ok(line) = rx.recv() {
        if stream.write_all(line.as_bytes()).and_then(|_| stream.write_all(b"\n")).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn read_loop(stream: TcpStream, client: u64, shared: Arc<Shared>) {
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            return;
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.ends_with(b"\n") => {
                let line = String::from_utf8_lossy(&buf).trim().to_string();
                buf.clear();
                if !line.is_empty() {
                    ingest(&shared, client, &line);
                }
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => break,
        }
    }
    lock(&shared.clients).retain(|c| c.id != client);
}

/// Validates one client line and queues it; invalid input only earns an error reply.
fn ingest(shared: &Shared, client: u64, line: &str) {
    let envelope = match parse_command(line) {
        Ok(e) => e,
        Err(msg) => {
            let id = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| v.get("id").and_then(|i| i.as_u64()));
            shared.reply(client, id, "unknown", Err(msg));
            return;
        }
    };
    if let Err(msg) = shared.limits.check(&envelope.command) {
        shared.reply(client, envelope.id, envelope.command.name(), Err(msg));
        return;
    }
    if envelope.command == CommandMessage::Estop {
        shared.estop.store(true, Ordering::SeqCst);
    }
    lock(&shared.queue).push_back(Queued { client, envelope });
}
