//! Simulation-backed control stack for a mobile weeding robot.

pub mod arm_kinematics;
pub mod camera;
pub mod force_control;
pub mod geometry;
pub mod sim_world;
pub mod localization;
pub mod platform_control;
pub mod weed_detection;
pub mod weeding_action;
pub mod robot;
pub mod mission_control;
pub mod runner;
pub mod scenario;
