//! Headless mission runs and their on-disk artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use weedbot_core::mission_control::load_weed_map;
use weedbot_core::runner::{weeding_rows, write_trace_csv, MissionExecutor, Progress, RunError, TRACE_NAMES};
use weedbot_core::scenario::{resolve_config_dir, ConfigError, Scenario};

pub const MISSION_LOG: &str = "mission_log.jsonl";
pub const METRICS: &str = "metrics.json";
pub const WEEDING_TRACE: &str = "weeding_trace.jsonl";
pub const PLATFORM_TRACE: &str = "platform_trace.jsonl";
pub const SUMMARY: &str = "run.json";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const INVARIANT: u8 = 3;
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub weed_map: PathBuf,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub config_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Invariant(String),
    #[error("{0}")]
    Io(String),
}

impl RunFailure {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunFailure::Config(_) => exit::CONFIG,
            RunFailure::Invariant(_) => exit::INVARIANT,
            RunFailure::Io(_) => exit::FAILURE,
        }
    }
}

impl From<ConfigError> for RunFailure {
    fn from(e: ConfigError) -> Self {
        RunFailure::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunFailure + '_ {
    move |e| RunFailure::Io(format!("{}: {e}", path.display()))
}

/// Written last; its presence marks a finished run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub complete: bool,
    pub weeds: usize,
    pub removed: usize,
    pub skipped: usize,
    pub simulated_time: f64,
    pub invariant_breach: Option<String>,
}

/// Loads inputs, runs the mission to the end and writes every artifact.
pub fn run_mission(args: &RunArgs) -> Result<RunSummary, RunFailure> {
    let config_dir = resolve_config_dir(args.config_dir.as_deref());
    let mut scenario = Scenario::load(&args.scenario, config_dir.as_deref())?;
    if let Some(seed) = args.seed {
        scenario.world.seed = seed;
    }
    let map_text = std::fs::read_to_string(&args.weed_map).map_err(|e| RunFailure::Config(format!("{}: {e}", args.weed_map.display())))?;
    let mission = load_weed_map(&map_text, &args.weed_map.display().to_string(), scenario.origin)
        .map_err(|e| RunFailure::Config(format!("{}: {e}", args.weed_map.display())))?;
    let mut robot = scenario.build_robot()?;
    let mut exec = MissionExecutor::new(mission);
    let result = exec.run(&mut robot, &scenario.tasks);

    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let out = |name: &str| args.out_dir.join(name);
    write_lines(&out(MISSION_LOG), exec.log.iter())?;
    write_json(&out(METRICS), &exec.metrics)?;
    let rows = weeding_rows(&exec.weeding);
    write_lines(&out(WEEDING_TRACE), rows.iter())?;
    write_lines(&out(PLATFORM_TRACE), robot.trace().iter())?;
    for what in TRACE_NAMES {
        let path = out(&format!("{what}.csv"));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        write_trace_csv(what, &rows, robot.trace(), &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    }

    let breach = match &result {
        Ok(_) => None,
        Err(RunError::Invariant(m)) => Some(m.clone()),
        Err(RunError::Protocol(e)) => Some(e.to_string()),
    };
    let summary = RunSummary {
        scenario: scenario.name.clone(),
        seed: scenario.world.seed,
        complete: matches!(result, Ok(Progress::Complete)),
        weeds: exec.metrics.weeds,
        removed: exec.metrics.removed,
        skipped: exec.metrics.skipped,
        simulated_time: exec.metrics.simulated_time,
        invariant_breach: breach.clone(),
    };
    write_json(&out(SUMMARY), &summary)?;
    match breach {
        Some(m) => Err(RunFailure::Invariant(m)),
        None if !summary.complete => Err(RunFailure::Invariant("mission stopped before all tasks finished".into())),
        None => Ok(summary),
    }
}

fn write_lines<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<(), RunFailure> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| RunFailure::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunFailure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunFailure::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}
