use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use weedbot_cli::export::{export_trace, ExportError};
use weedbot_cli::run::{exit, run_mission, RunArgs};
use weedbot_cli::service::{ServeOptions, Service};
use weedbot_core::mission_control::load_weed_map;
use weedbot_core::scenario::{resolve_config_dir, Scenario};

#[derive(Parser)]
#[command(name = "weedbot", version, about = "Simulated pasture weeding robot")]
struct Cli {
    /// Directory with default section files (world.json, controller.json, ...).
    #[arg(long, global = true, env = "WEEDBOT_CONFIG_DIR")]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mission headless and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        weed_map: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Serve telemetry and accept operator commands over TCP.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Mission to load at startup.
        #[arg(long)]
        weed_map: Option<PathBuf>,
        /// Simulated seconds per wall-clock second (0 = as fast as possible).
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
    /// Write one trace of a finished run as CSV.
    Export {
        #[arg(long)]
        run_dir: PathBuf,
        /// flange_position, flange_rotation, contact_force or platform.
        #[arg(long)]
        what: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, weed_map, seed, out_dir } => {
            let args = RunArgs { scenario, weed_map, seed, out_dir: out_dir.clone(), config_dir: cli.config_dir };
            match run_mission(&args) {
                Ok(s) => {
                    println!("{}: {} of {} weeds removed, {} skipped, {:.1} s simulated; artifacts in {}", s.scenario, s.removed, s.weeds, s.skipped, s.simulated_time, out_dir.display());
                    exit::OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Serve { scenario, port, host, weed_map, time_scale } => serve(cli.config_dir, scenario, format!("{host}:{port}"), weed_map, time_scale),
        Command::Export { run_dir, what, out } => {
            let result = match &out {
                Some(path) => std::fs::File::create(path).map_err(ExportError::Write).and_then(|mut f| export_trace(&run_dir, &what, &mut f)),
                None => export_trace(&run_dir, &what, &mut std::io::stdout().lock()),
            };
            match result {
                Ok(()) => exit::OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    match e {
                        ExportError::UnknownTrace(_) | ExportError::Read { .. } => exit::CONFIG,
                        ExportError::Write(_) => exit::FAILURE,
                    }
                }
            }
        }
    };
    ExitCode::from(code)
}

fn serve(config_dir: Option<PathBuf>, scenario: PathBuf, addr: String, weed_map: Option<PathBuf>, time_scale: f64) -> u8 {
    let config_dir = resolve_config_dir(config_dir.as_deref());
    let scenario = match Scenario::load(&scenario, config_dir.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::CONFIG;
        }
    };
    let mission = match weed_map {
        None => None,
        Some(path) => match std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| load_weed_map(&t, &path.display().to_string(), scenario.origin).map_err(|e| e.to_string())) {
            Ok(m) => Some(m),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return exit::CONFIG;
            }
        },
    };
    match Service::start(&scenario, ServeOptions { addr, time_scale, mission, ..ServeOptions::default() }) {
        Ok(service) => {
            println!("listening on {}", service.local_addr());
            service.wait();
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::FAILURE
        }
    }
}
