//! Scenario files: a JSON document whose sections override the defaults
//! found in the config directory, which in turn override built-in values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::localization::NoiseConfig;
use crate::mission_control::GeoOrigin;
use crate::platform_control::ControllerConfig;
use crate::robot::{Robot, SensorRates};
use crate::runner::TaskSettings;
use crate::sim_world::{World, WorldConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Config-directory file for each scenario section.
pub const SECTION_FILES: [(&str, &str); 7] = [
    ("world", "world.json"),
    ("estimator", "estimator.json"),
    ("controller", "controller.json"),
    ("rates", "rates.json"),
    ("runner", "runner.json"),
    ("detection", "detection.json"),
    ("weeding", "weeding.json"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub world: WorldConfig,
    pub estimator: NoiseConfig,
    pub controller: ControllerConfig,
    pub rates: SensorRates,
    #[serde(flatten)]
    pub tasks: TaskSettings,
    /// Geodetic origin for weed maps given in lat/lon.
    pub origin: Option<GeoOrigin>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            world: WorldConfig::default(),
            estimator: NoiseConfig::default(),
            controller: ControllerConfig::default(),
            rates: SensorRates::default(),
            tasks: TaskSettings::default(),
            origin: None,
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(existing) => merge_json(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

impl Scenario {
    /// Built-in defaults overlaid with whatever section files `config_dir` holds.
    pub fn defaults_from(config_dir: Option<&Path>) -> Result<Value, ConfigError> {
        let mut base = serde_json::to_value(Scenario::default()).expect("scenario serializes");
        if let Some(dir) = config_dir {
            for (section, file) in SECTION_FILES {
                let path = dir.join(file);
                if path.is_file() {
                    let value = read_json(&path)?;
                    if section == "runner" || section == "detection" || section == "weeding" {
                        merge_json(&mut base, serde_json::json!({ section: value }));
                    } else {
                        merge_json(&mut base[section], value);
                    }
                }
            }
        }
        Ok(base)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let scenario: Scenario = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path, config_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut base = Self::defaults_from(config_dir)?;
        merge_json(&mut base, read_json(path)?);
        Self::from_value(base).map_err(|e| match e {
            ConfigError::Invalid(m) => ConfigError::Parse { path: path.to_path_buf(), message: m },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if (self.controller.wheelbase - self.world.platform.wheelbase).abs() > 1e-12 {
            return bad("controller wheelbase differs from the platform wheelbase".into());
        }
        if self.controller.max_wheel_speed > self.world.platform.max_wheel_speed {
            return bad("controller wheel speed limit exceeds the platform limit".into());
        }
        for w in &self.world.weeds {
            let [x, y, z] = w.root_position;
            let surface = self.world.ground.surface_height(x, y);
            if (z - surface).abs() > 1e-3 {
                return bad(format!("weed {} root z = {z} is off the ground surface ({surface:.4})", w.id));
            }
        }
        self.tasks.weeding.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tasks.runner.stow_joints.len() != self.world.chain.joints.len() {
            return bad("stow_joints must list one angle per joint".into());
        }
        Ok(())
    }

    pub fn build_robot(&self) -> Result<Robot, ConfigError> {
        let world = World::new(self.world.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Robot::new(world, self.estimator.clone(), self.controller.clone(), self.rates.clone()))
    }
}

/// Config directory: explicit flag, then `WEEDBOT_CONFIG_DIR`, then `./config` if present.
pub fn resolve_config_dir(flag: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os("WEEDBOT_CONFIG_DIR") {
        return Some(PathBuf::from(p));
    }
    let local = PathBuf::from("config");
    local.is_dir().then_some(local)
}
